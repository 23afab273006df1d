"""Element-local HHO operators.

Local unknowns are ordered element block first (``n_T`` coefficients on the
element basis truncated to degree ``l``) followed by one block of ``k + 1``
coefficients per face, in the order of ``mesh.element_to_faces[t]``.

The element basis is orthonormal and hierarchical up to degree ``k + 1``, so
the L2 projection onto degree ``l`` of a degree ``k + 1`` polynomial is a
truncation of its coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .mesh import PolyMesh, polygon_diameter, signed_area
from .quadrature import (
    OrthonormalBasis,
    QuadratureRule,
    dim_p,
    element_basis,
    face_basis,
    l2_project,
    polygon_quadrature,
    segment_quadrature,
)

VARIANTS = ("main", "kminus1", "boundary", "gradient", "hdg")
L_MODES = {"k-1": -1, "k": 0, "k+1": 1}


class ConfigurationError(ValueError):
    """Inadmissible combination of degrees and stabilisation."""


class NumericalError(RuntimeError):
    """A local or global solve broke down."""


@dataclass(frozen=True)
class LocalSpace:
    k: int
    l: int

    def __post_init__(self):
        if self.k < 0:
            raise ConfigurationError("face degree k must be >= 0")
        if self.l < 0 or self.l < self.k - 1 or self.l > self.k + 1:
            raise ConfigurationError(f"element degree l={self.l} must satisfy max(0, k-1) <= l <= k+1 (k={self.k})")

    @classmethod
    def from_mode(cls, k: int, l_mode: str = "k") -> "LocalSpace":
        if l_mode not in L_MODES:
            raise ConfigurationError(f"unknown l-mode {l_mode!r}; expected one of {sorted(L_MODES)}")
        return cls(k, k + L_MODES[l_mode])

    @property
    def n_T(self) -> int:
        return dim_p(self.l)

    @property
    def n_F(self) -> int:
        return self.k + 1

    @property
    def n_K(self) -> int:
        return dim_p(self.k + 1)

    def n_local(self, n_faces: int) -> int:
        return self.n_T + n_faces * self.n_F


def check_admissible(space: LocalSpace, variant: str) -> None:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown stabilisation {variant!r}; expected one of {VARIANTS}")
    if variant == "kminus1" and space.l != space.k - 1:
        raise ConfigurationError("stabilisation 'kminus1' requires l = k - 1 (coercivity fails otherwise)")
    if variant == "hdg" and space.l != space.k + 1:
        raise ConfigurationError("stabilisation 'hdg' requires l = k + 1")


@dataclass(frozen=True, eq=False)
class LocalFace:
    index: int
    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray        # outward with respect to the element
    length: float
    rule: QuadratureRule
    basis: OrthonormalBasis
    psi: np.ndarray           # face basis at face points (nq, n_F)
    phi: np.ndarray           # element basis at face points (nq, n_K)
    dphi_n: np.ndarray        # normal derivative of element basis at face points (nq, n_K)
    mass: np.ndarray          # face Gram matrix (identity when orthonormal)
    cross: np.ndarray         # (psi_a, phi_i)_F, shape (n_F, n_K)


@dataclass(frozen=True, eq=False)
class LocalElement:
    """Geometry, quadrature and basis data of one element for a given LocalSpace."""

    index: int
    vertices: np.ndarray
    h: float
    area: float
    rule: QuadratureRule
    basis: OrthonormalBasis
    phi: np.ndarray           # (nq, n_K)
    stiffness: np.ndarray     # (grad phi_i, grad phi_j)_T, (n_K, n_K)
    faces: tuple[LocalFace, ...]
    space: LocalSpace

    @property
    def n_local(self) -> int:
        return self.space.n_local(len(self.faces))

    def face_slice(self, j: int) -> slice:
        s = self.space.n_T + j * self.space.n_F
        return slice(s, s + self.space.n_F)


def make_element(mesh: PolyMesh, t: int, space: LocalSpace, *, basis: str = "orthonormal",
                 element_order: int | None = None, face_order: int | None = None,
                 face_cache: dict | None = None) -> LocalElement:
    """Build quadrature rules and bases on element ``t``.

    ``basis="raw"`` keeps face bases as unnormalised scaled monomials (the
    element basis stays orthonormal). ``face_cache`` lets neighbouring
    elements reuse the rule and basis of a shared face.
    """
    if basis not in ("orthonormal", "raw"):
        raise ConfigurationError(f"unknown basis mode {basis!r}")
    k = space.k
    element_order = 2 * (k + 2) if element_order is None else element_order
    face_order = 2 * k + 2 if face_order is None else face_order
    pts = mesh.element_vertices(t)
    rule = polygon_quadrature(pts, element_order)
    eb = element_basis(pts, k + 1, rule)
    phi = eb.values(rule.points)
    grad = eb.gradients(rule.points)
    wg = grad * rule.weights[:, None, None]
    K = wg[:, :, 0].T @ grad[:, :, 0] + wg[:, :, 1].T @ grad[:, :, 1]
    faces = []
    for f, sgn in zip(mesh.element_to_faces[t], mesh.element_face_signs[t]):
        # canonical face orientation so both neighbours share one face basis
        a, b = mesh.face_vertices(f)
        n = mesh.face_normal(f) * sgn
        cached = face_cache.get(int(f)) if face_cache is not None else None
        if cached is None:
            frule = segment_quadrature(a, b, face_order)
            fb = face_basis(a, b, k, frule, orthonormal=(basis == "orthonormal"))
            if face_cache is not None:
                face_cache[int(f)] = (frule, fb)
        else:
            frule, fb = cached
        psi = fb.values(frule.points)
        fphi = eb.values(frule.points)
        dphi_n = eb.gradients(frule.points) @ n
        w = frule.weights[:, None]
        faces.append(LocalFace(int(f), a, b, n, float(np.hypot(*(b - a))), frule, fb, psi, fphi, dphi_n,
                               psi.T @ (w * psi), psi.T @ (w * fphi)))
    return LocalElement(t, pts, polygon_diameter(pts), signed_area(pts), rule, eb, phi, K, tuple(faces), space)


def interpolate(v, T: LocalElement, space: LocalSpace | None = None) -> np.ndarray:
    """Local interpolate: L2 projections of ``v(x, y)`` on the element and on each face."""
    space = space or T.space
    out = np.zeros(T.n_local)
    out[:space.n_T] = l2_project(v, T.basis, T.rule)[:space.n_T]
    for j, F in enumerate(T.faces):
        out[T.face_slice(j)] = l2_project(v, F.basis, F.rule)
    return out


def potential_reconstruction(T: LocalElement, space: LocalSpace | None = None) -> np.ndarray:
    """Matrix of the degree k+1 potential reconstruction, shape (n_K, n_local)."""
    space = space or T.space
    nT, nK = space.n_T, space.n_K
    B = np.zeros((nK, T.n_local))
    # -(v_T, lap w)_T rewritten as (grad v_T, grad w)_T - (v_T, grad w . n)_dT
    B[:, :nT] = T.stiffness[:, :nT]
    for j, F in enumerate(T.faces):
        wdn = F.rule.weights[:, None] * F.dphi_n
        B[:, :nT] -= wdn.T @ F.phi[:, :nT]
        B[:, T.face_slice(j)] = wdn.T @ F.psi
    P = np.zeros_like(B)
    P[0, 0] = 1.0  # mean-value closure; phi_0 is the normalised constant
    try:
        P[1:] = sla.solve(T.stiffness[1:, 1:], B[1:], assume_a="pos")
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular reconstruction stiffness on element {T.index}") from exc
    return P


def _face_projection(F: LocalFace, rhs: np.ndarray) -> np.ndarray:
    if F.basis.orthonormal:
        return rhs
    return np.linalg.solve(F.mass, rhs)


def difference_operators(T: LocalElement, space: LocalSpace | None = None, P: np.ndarray | None = None):
    """Return ``(D_T, [D_F for each face])`` as matrices acting on local unknowns."""
    space = space or T.space
    P = potential_reconstruction(T, space) if P is None else P
    nT = space.n_T
    D_T = P[:nT].copy()
    D_T[:, :nT] -= np.eye(nT)
    D_F = []
    for j, F in enumerate(T.faces):
        D = _face_projection(F, F.cross @ P)
        D[:, T.face_slice(j)] -= np.eye(space.n_F)
        D_F.append(D)
    return D_T, D_F


def stabilization(T: LocalElement, variant: str = "main", space: LocalSpace | None = None, *,
                  P: np.ndarray | None = None, diffs=None, face_scaling: str = "element") -> np.ndarray:
    """Stabilisation matrix of the requested variant.

    ``face_scaling="face"`` replaces the h_T^{-1} weight of boundary terms by h_F^{-1}.
    """
    space = space or T.space
    check_admissible(space, variant)
    nT = space.n_T
    D_T, D_F = diffs if diffs is not None else difference_operators(T, space, P)
    h = T.h

    def wf(F):
        return 1.0 / (F.length if face_scaling == "face" else h)

    S = np.zeros((T.n_local, T.n_local))
    if variant in ("main", "kminus1", "gradient"):
        for F, D in zip(T.faces, D_F):
            S += wf(F) * D.T @ F.mass @ D
        if variant == "main":
            S += D_T.T @ D_T / h ** 2
        elif variant == "gradient":
            S += D_T.T @ T.stiffness[:nT, :nT] @ D_T
    elif variant == "boundary":
        for F, D in zip(T.faces, D_F):
            R = F.psi @ D - F.phi[:, :nT] @ D_T
            S += wf(F) * R.T @ (F.rule.weights[:, None] * R)
    else:  # hdg
        for j, F in enumerate(T.faces):
            H = np.zeros((space.n_F, T.n_local))
            H[:, T.face_slice(j)] = np.eye(space.n_F)
            H[:, :nT] -= _face_projection(F, F.cross[:, :nT])
            S += wf(F) * H.T @ F.mass @ H
    return 0.5 * (S + S.T)


@dataclass(frozen=True, eq=False)
class LocalOperatorPack:
    element: LocalElement
    variant: str
    P: np.ndarray
    D_T: np.ndarray
    D_F: list
    S: np.ndarray
    A: np.ndarray

    @property
    def G(self) -> np.ndarray:
        """Consistent part P^T K P of the local bilinear form."""
        return self.P.T @ self.element.stiffness @ self.P


def local_pack(T: LocalElement, variant: str = "main", *, face_scaling: str = "element") -> LocalOperatorPack:
    space = T.space
    check_admissible(space, variant)
    P = potential_reconstruction(T, space)
    diffs = difference_operators(T, space, P)
    S = stabilization(T, variant, space, diffs=diffs, face_scaling=face_scaling)
    A = P.T @ T.stiffness @ P + S
    A = 0.5 * (A + A.T)
    return LocalOperatorPack(T, variant, P, diffs[0], diffs[1], S, A)


def local_bilinear(T: LocalElement, variant: str = "main", **kwargs) -> np.ndarray:
    return local_pack(T, variant, **kwargs).A


def element_load(T: LocalElement, f) -> np.ndarray:
    """(f, phi_i)_T for the element basis functions of degree <= l."""
    nT = T.space.n_T
    if f is None:
        return np.zeros(nT)
    vals = np.broadcast_to(np.asarray(f(T.rule.points[:, 0], T.rule.points[:, 1]), dtype=float),
                           T.rule.weights.shape)
    return T.phi[:, :nT].T @ (T.rule.weights * vals)


@dataclass(frozen=True, eq=False)
class CondensedLocal:
    schur: np.ndarray      # face-face block after eliminating the element unknowns
    lift: np.ndarray       # face unknowns -> element unknowns (homogeneous part)
    g: np.ndarray          # element unknowns driven by the source
    face_load: np.ndarray
    element_load: np.ndarray


def local_condense(T: LocalElement, A: np.ndarray, f=None) -> CondensedLocal:
    nT = T.space.n_T
    A_TT, A_TF, A_FF = A[:nT, :nT], A[:nT, nT:], A[nT:, nT:]
    b = element_load(T, f)
    try:
        cho = sla.cho_factor(A_TT)
    except sla.LinAlgError as exc:
        raise NumericalError(f"element block of element {T.index} is singular") from exc
    X = sla.cho_solve(cho, np.column_stack([A_TF, b]))
    lift = -X[:, :-1]
    g = X[:, -1]
    schur = A_FF + A_TF.T @ lift
    return CondensedLocal(0.5 * (schur + schur.T), lift, g, -A_TF.T @ g, b)


def local_seminorm(T: LocalElement, v: np.ndarray, space: LocalSpace | None = None) -> float:
    """Discrete energy-like seminorm: grad of v_T plus scaled face jumps v_F - v_T."""
    space = space or T.space
    nT = space.n_T
    vT = v[:nT]
    total = float(vT @ T.stiffness[:nT, :nT] @ vT)
    for j, F in enumerate(T.faces):
        jump = F.psi @ v[T.face_slice(j)] - F.phi[:, :nT] @ vT
        total += float(F.rule.weights @ jump ** 2) / T.h
    return float(np.sqrt(max(total, 0.0)))
