"""Quadrature rules on segments and polygons, and L2-orthonormal polynomial bases."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import signed_area


class DegenerateDomainError(ValueError):
    """The monomial family is numerically dependent on the given domain."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,)
    exactness_degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


@lru_cache(maxsize=64)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def segment_quadrature(a, b, order: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment [a, b], exact up to degree ``order``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    if length == 0.0:
        raise ValueError("zero-length face")
    n = max(1, math.ceil((order + 1) / 2))
    x, w = _gauss_legendre(n)
    pts = 0.5 * (a + b) + 0.5 * x[:, None] * (b - a)
    return QuadratureRule(pts, 0.5 * length * w, order)


@lru_cache(maxsize=64)
def _collapsed_square(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # degree q on a triangle becomes degree q+1 (in u) after the collapse
    n = max(1, math.ceil((order + 2) / 2))
    x, w = _gauss_legendre(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    return u.ravel(), v.ravel(), (wu * wv * u).ravel()


def triangle_quadrature(tri: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on one or several triangles ``tri`` of shape (..., 3, 2)."""
    tri = np.asarray(tri, dtype=float).reshape(-1, 3, 2)
    u, v, w = _collapsed_square(order)
    p0, p1, p2 = tri[:, 0], tri[:, 1], tri[:, 2]
    # x = p0 + u (p1 - p0) + u v (p2 - p1), jacobian 2|T| u (u factor already in w)
    pts = (p0[:, None, :] + u[None, :, None] * (p1 - p0)[:, None, :]
           + (u * v)[None, :, None] * (p2 - p1)[:, None, :])
    d1, d2 = p1 - p0, p2 - p0
    twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    wts = twice_area[:, None] * w[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def triangulate(points: np.ndarray) -> np.ndarray:
    """Split a simple polygon into triangles (array of shape (m, 3, 2)).

    Uses a fan from the vertex average when every fan triangle is positively
    oriented, otherwise a constrained Delaunay triangulation of the polygon.
    """
    points = np.asarray(points, dtype=float)
    c = points.mean(axis=0)
    a = points
    b = np.roll(points, -1, axis=0)
    cross = (a[:, 0] - c[0]) * (b[:, 1] - c[1]) - (a[:, 1] - c[1]) * (b[:, 0] - c[0])
    scale = max(np.ptp(points[:, 0]), np.ptp(points[:, 1])) ** 2
    if (cross >= -1e-13 * scale).all():
        keep = cross > 1e-15 * scale
        return np.stack([np.broadcast_to(c, a.shape)[keep], a[keep], b[keep]], axis=1)
    import shapely

    tris = shapely.constrained_delaunay_triangles(shapely.Polygon(points))
    out = []
    for g in tris.geoms:
        t = np.asarray(g.exterior.coords)[:3]
        if signed_area(t) < 0:
            t = t[::-1]
        out.append(t)
    return np.asarray(out)


def polygon_quadrature(points, order: int) -> QuadratureRule:
    """Quadrature on a simple polygon, exact for total degree ``order``."""
    tris = triangulate(np.asarray(points, dtype=float))
    pts, wts = triangle_quadrature(tris, order)
    return QuadratureRule(pts, wts, order)


# -- polynomial bases ---------------------------------------------------------------------

@lru_cache(maxsize=32)
def exponents_2d(degree: int) -> np.ndarray:
    """Exponents (a, b) of x^a y^b ordered by total degree."""
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=np.int64).reshape(-1, 2)


def dim_p(degree: int, dim: int = 2) -> int:
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2 if dim == 2 else degree + 1


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Polynomial basis ``phi_i = sum_j coefficients[i, j] * m_j``.

    ``m_j`` are monomials in local coordinates ``frame @ (x - center)``. For
    ``dim == 1`` (faces) the frame is a single row along the face tangent.
    ``orthonormal`` is False for the raw scaled-monomial mode, in which case
    ``coefficients`` is the identity.
    """

    dim: int
    degree: int
    center: np.ndarray
    frame: np.ndarray
    exponents: np.ndarray
    coefficients: np.ndarray
    rule: QuadratureRule
    orthonormal: bool = True

    @property
    def size(self) -> int:
        return len(self.coefficients)

    def local(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self.center) @ self.frame.T

    def monomials(self, pts: np.ndarray) -> np.ndarray:
        xi = self.local(pts)
        if self.dim == 1:
            return xi[:, :1] ** self.exponents[None, :, 0]
        return xi[:, None, 0] ** self.exponents[None, :, 0] * xi[:, None, 1] ** self.exponents[None, :, 1]

    def values(self, pts: np.ndarray) -> np.ndarray:
        return self.monomials(pts) @ self.coefficients.T

    def gradients(self, pts: np.ndarray) -> np.ndarray:
        """Physical gradients, shape (n_pts, size, 2). Elements only."""
        if self.dim != 2:
            raise ValueError("gradients are only available for element bases")
        xi = self.local(pts)
        ea, eb = self.exponents[:, 0], self.exponents[:, 1]
        xa = xi[:, None, 0] ** np.maximum(ea - 1, 0)
        yb = xi[:, None, 1] ** np.maximum(eb - 1, 0)
        dxi = ea * xa * xi[:, None, 1] ** eb
        deta = eb * yb * xi[:, None, 0] ** ea
        dm = np.stack([dxi, deta], axis=-1) @ self.frame      # chain rule to physical coords
        return np.einsum("ij,pjd->pid", self.coefficients, dm)

    def gram(self, rule: QuadratureRule | None = None) -> np.ndarray:
        rule = rule or self.rule
        v = self.values(rule.points)
        return v.T @ (rule.weights[:, None] * v)

    def frame_bounds(self) -> tuple[float, float]:
        """Extreme eigenvalues (c_F, C_F) of the Gram matrix."""
        ev = np.linalg.eigvalsh(self.gram())
        return float(ev[0]), float(ev[-1])


def element_frame(points: np.ndarray, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Vertex-average centre and principal-axis frame scaled to the element extent."""
    points = np.asarray(points, dtype=float)
    center = points.mean(axis=0)
    d = rule.points - center
    cov = d.T @ (rule.weights[:, None] * d)
    _, vecs = np.linalg.eigh(cov)
    axes = vecs.T
    ext = np.abs((points - center) @ axes.T).max(axis=0)
    return center, axes / ext[:, None]


def face_frame(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    return 0.5 * (a + b), (d / (0.5 * np.dot(d, d)))[None, :]


def orthonormalize(center, frame, dim: int, degree: int, rule: QuadratureRule, *, orthonormal: bool = True) -> OrthonormalBasis:
    """Classical Gram-Schmidt, with one re-orthogonalisation pass, of scaled monomials."""
    if rule.exactness_degree < 2 * degree:
        raise ValueError("quadrature rule not exact enough for the Gram matrix")
    expo = exponents_2d(degree) if dim == 2 else np.arange(degree + 1, dtype=np.int64)[:, None]
    n = len(expo)
    basis = OrthonormalBasis(dim, degree, np.asarray(center, float), np.asarray(frame, float), expo,
                             np.eye(n), rule, orthonormal)
    if not orthonormal:
        return basis
    sw = np.sqrt(rule.weights)
    A = basis.monomials(rule.points) * sw[:, None]
    Q = np.zeros_like(A)
    C = np.zeros((n, n))
    for i in range(n):
        v = A[:, i].copy()
        c = np.zeros(n)
        c[i] = 1.0
        for _ in range(2):
            r = Q[:, :i].T @ v
            v -= Q[:, :i] @ r
            c -= C[:i].T @ r
        nrm = np.linalg.norm(v)
        if nrm < 1e-13 * np.linalg.norm(A[:, i]):
            raise DegenerateDomainError(f"monomial {i} is numerically dependent on lower modes")
        Q[:, i] = v / nrm
        C[i] = c / nrm
    return OrthonormalBasis(dim, degree, basis.center, basis.frame, expo, C, rule, True)


def element_basis(points, degree: int, rule: QuadratureRule, *, orthonormal: bool = True) -> OrthonormalBasis:
    center, frame = element_frame(points, rule)
    return orthonormalize(center, frame, 2, degree, rule, orthonormal=orthonormal)


def face_basis(a, b, degree: int, rule: QuadratureRule, *, orthonormal: bool = True) -> OrthonormalBasis:
    center, frame = face_frame(a, b)
    return orthonormalize(center, frame, 1, degree, rule, orthonormal=orthonormal)


def l2_project(f, basis: OrthonormalBasis, rule: QuadratureRule | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto the span of ``basis``.

    ``f`` is either a callable ``f(x, y)`` or an array of values at the rule points.
    """
    rule = rule or basis.rule
    vals = f(rule.points[:, 0], rule.points[:, 1]) if callable(f) else np.asarray(f)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(rule.weights),))
    phi = basis.values(rule.points)
    rhs = phi.T @ (rule.weights * vals)
    if basis.orthonormal:
        return rhs
    return np.linalg.solve(basis.gram(rule), rhs)
