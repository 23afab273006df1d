"""Polygonal meshes in two dimensions.

A :class:`PolyMesh` stores vertices, counter-clockwise element loops and the
deduplicated face (edge) set together with the incidence maps between them.
Faces are straight segments between two consecutive loop vertices, so an
element side carrying a hanging node is made of two faces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# relative distance (in units of h_T) below which a vertex is considered to lie on a segment
COLLINEAR_TOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh input (degenerate cells, non-manifold faces...)."""


class EmptySystemError(ValueError):
    """The mesh has no internal face, so the condensed system is empty."""


@dataclass(frozen=True, eq=False)
class PolyMesh:
    vertices: np.ndarray                 # (n_vertices, 2)
    elements: tuple[tuple[int, ...], ...]  # CCW vertex loops
    faces: np.ndarray                    # (n_faces, 2) vertex pairs
    face_to_elements: tuple[tuple[int, ...], ...]
    element_to_faces: tuple[np.ndarray, ...]
    element_face_signs: tuple[np.ndarray, ...]  # +1 when the face normal points out of the element
    boundary_faces: np.ndarray
    dangling_vertices: tuple[int, ...] = ()
    name: str = ""

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def internal_faces(self) -> np.ndarray:
        mask = np.ones(self.n_faces, dtype=bool)
        mask[self.boundary_faces] = False
        return np.flatnonzero(mask)

    @property
    def is_boundary_face(self) -> np.ndarray:
        mask = np.zeros(self.n_faces, dtype=bool)
        mask[self.boundary_faces] = True
        return mask

    def element_vertices(self, t: int) -> np.ndarray:
        return self.vertices[list(self.elements[t])]

    def face_vertices(self, f: int) -> np.ndarray:
        return self.vertices[self.faces[f]]

    def face_normal(self, f: int) -> np.ndarray:
        """Unit normal of face ``f`` (right of the direction a -> b)."""
        a, b = self.face_vertices(f)
        d = b - a
        return np.array([d[1], -d[0]]) / np.hypot(*d)

    def neighbours(self, t: int) -> list[int]:
        out = []
        for f in self.element_to_faces[t]:
            for s in self.face_to_elements[f]:
                if s != t and s not in out:
                    out.append(s)
        return out


@dataclass(frozen=True)
class MeshMetrics:
    h_max: float
    h_min: float
    h_T: np.ndarray
    h_F: np.ndarray
    area: np.ndarray
    perimeter: np.ndarray
    regularity_estimate: float = field(default=float("nan"))


def signed_area(points: np.ndarray) -> float:
    # shift to the first vertex: avoids cancellation far from the origin
    points = np.asarray(points, dtype=float)
    x, y = (points - points[0]).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_diameter(points: np.ndarray) -> float:
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1).max()))


def _segments_cross(p: np.ndarray) -> bool:
    """True if two non-adjacent edges of the closed polyline ``p`` intersect."""
    m = len(p)
    if m < 4:
        return False
    a = p
    b = np.roll(p, -1, axis=0)

    def orient(u, v, w):
        return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (v[..., 1] - u[..., 1]) * (w[..., 0] - u[..., 0])

    i, j = np.triu_indices(m, k=2)
    keep = ~((i == 0) & (j == m - 1))
    i, j = i[keep], j[keep]
    a1, b1, a2, b2 = a[i], b[i], a[j], b[j]
    scale = max(np.ptp(p[:, 0]), np.ptp(p[:, 1])) ** 2
    eps = 1e-14 * scale
    o1 = orient(a1, b1, a2)
    o2 = orient(a1, b1, b2)
    o3 = orient(a2, b2, a1)
    o4 = orient(a2, b2, b1)
    proper = (o1 * o2 < -eps * eps) & (o3 * o4 < -eps * eps)
    return bool(proper.any())


def _insert_hanging_nodes(vertices: np.ndarray, loops: list[list[int]]) -> list[list[int]]:
    """Insert vertices lying in the interior of an element edge into that element's loop."""
    counts: dict[tuple[int, int], int] = {}
    for loop in loops:
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    lonely = {key for key, c in counts.items() if c == 1}
    if not lonely:
        return loops
    used = sorted({v for loop in loops for v in loop})
    used = np.asarray(used)
    order = np.argsort(vertices[used, 0], kind="stable")
    xs = vertices[used[order], 0]
    out = []
    for loop in loops:
        pts = vertices[loop]
        h = polygon_diameter(pts)
        tol = COLLINEAR_TOL * h
        new_loop: list[int] = []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            new_loop.append(a)
            key = (a, b) if a < b else (b, a)
            if key not in lonely:
                continue
            pa, pb = vertices[a], vertices[b]
            lo, hi = sorted((pa[0], pb[0]))
            cand = used[order[np.searchsorted(xs, lo - tol):np.searchsorted(xs, hi + tol, side="right")]]
            cand = cand[(cand != a) & (cand != b)]
            if cand.size == 0:
                continue
            d = pb - pa
            length = np.hypot(*d)
            rel = vertices[cand] - pa
            s = rel @ d / length ** 2
            dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / length
            on = (dist <= tol) & (s * length > tol) & ((1 - s) * length > tol)
            if on.any():
                hits = cand[on][np.argsort(s[on])]
                new_loop.extend(int(v) for v in hits)
        out.append(new_loop)
    return out


def build_mesh(vertices, cells, *, insert_hanging: bool = True, name: str = "") -> PolyMesh:
    """Build a validated :class:`PolyMesh` from vertex coordinates and cell loops.

    Clockwise loops are reversed. Vertices sitting on another element's edge
    (hanging nodes) are inserted into that element's loop when
    ``insert_hanging`` is set, so every face is shared exactly by the elements
    on each of its sides.
    """
    V = np.asarray(vertices, dtype=float).reshape(-1, 2)
    nv = len(V)
    loops: list[list[int]] = []
    for c, cell in enumerate(cells):
        loop = [int(i) for i in cell]
        if any(i < 0 or i >= nv for i in loop):
            raise MeshError(f"cell {c} references an invalid vertex index")
        # drop repeated consecutive vertices
        loop = [v for i, v in enumerate(loop) if v != loop[i - 1]] if len(loop) > 1 else loop
        if len(loop) < 3 or len(set(loop)) != len(loop):
            raise MeshError(f"degenerate cell {c}: needs at least 3 distinct vertices")
        area = signed_area(V[loop])
        if abs(area) <= 1e-14 * polygon_diameter(V[loop]) ** 2:
            raise MeshError(f"degenerate cell {c}: zero area")
        if area < 0:
            loop = loop[::-1]
        loops.append(loop)
    if insert_hanging:
        loops = _insert_hanging_nodes(V, loops)
    for c, loop in enumerate(loops):
        if _segments_cross(V[loop]):
            raise MeshError(f"cell {c} is not a simple polygon")

    face_index: dict[tuple[int, int], int] = {}
    faces: list[tuple[int, int]] = []
    f2e: list[list[int]] = []
    e2f: list[np.ndarray] = []
    signs: list[np.ndarray] = []
    for t, loop in enumerate(loops):
        fl, sl = [], []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (a, b) if a < b else (b, a)
            f = face_index.get(key)
            if f is None:
                f = len(faces)
                face_index[key] = f
                faces.append((a, b))
                f2e.append([])
            f2e[f].append(t)
            if len(f2e[f]) > 2:
                raise MeshError(f"non-manifold face {key}: shared by elements {f2e[f]}")
            fl.append(f)
            sl.append(1 if faces[f] == (a, b) else -1)
        e2f.append(np.asarray(fl, dtype=np.int64))
        signs.append(np.asarray(sl, dtype=np.int64))

    for f, (els) in enumerate(f2e):
        if len(els) == 2:
            t0, t1 = els
            s0 = signs[t0][list(e2f[t0]).index(f)]
            s1 = signs[t1][list(e2f[t1]).index(f)]
            if s0 + s1 != 0:
                raise MeshError(f"inconsistent orientation across face {f} (elements {t0}, {t1} overlap)")

    boundary = np.asarray([f for f, els in enumerate(f2e) if len(els) == 1], dtype=np.int64)
    used = np.zeros(nv, dtype=bool)
    for loop in loops:
        used[loop] = True
    dangling = tuple(int(i) for i in np.flatnonzero(~used))
    if dangling:
        logger.warning("mesh has %d dangling vertices", len(dangling))

    faces_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 2)
    mesh = PolyMesh(
        vertices=V,
        elements=tuple(tuple(loop) for loop in loops),
        faces=faces_arr,
        face_to_elements=tuple(tuple(e) for e in f2e),
        element_to_faces=tuple(e2f),
        element_face_signs=tuple(signs),
        boundary_faces=boundary,
        dangling_vertices=dangling,
        name=name,
    )
    _check_area_conservation(mesh)
    return mesh


def _check_area_conservation(mesh: PolyMesh) -> None:
    # area enclosed by the oriented boundary faces must equal the summed element areas
    total = sum(signed_area(mesh.element_vertices(t)) for t in range(mesh.n_elements))
    enclosed = 0.0
    V = mesh.vertices - mesh.vertices.mean(axis=0)
    for f in mesh.boundary_faces:
        t = mesh.face_to_elements[f][0]
        j = list(mesh.element_to_faces[t]).index(f)
        a, b = mesh.faces[f] if mesh.element_face_signs[t][j] > 0 else mesh.faces[f][::-1]
        enclosed += 0.5 * (V[a, 0] * V[b, 1] - V[b, 0] * V[a, 1])
    if abs(total - enclosed) > 1e-10 * max(abs(total), 1e-300):
        raise MeshError(f"elements overlap or leave gaps: area {total} vs enclosed {enclosed}")
    # overlapping elements whose edges are all boundary faces pass the test above
    import shapely

    covered = shapely.union_all([shapely.Polygon(mesh.element_vertices(t)) for t in range(mesh.n_elements)]).area
    if abs(total - covered) > 1e-10 * total:
        raise MeshError(f"elements overlap: summed area {total} vs covered area {covered}")


def _inradius(points: np.ndarray) -> float:
    import shapely

    poly = shapely.Polygon(points)
    h = polygon_diameter(points)
    line = shapely.maximum_inscribed_circle(poly, tolerance=1e-3 * h)
    return float(shapely.length(line))


def compute_metrics(mesh: PolyMesh, *, regularity: bool = False) -> MeshMetrics:
    """Diameters, areas and perimeters of all elements and faces.

    The inradius/diameter regularity proxy is only evaluated when
    ``regularity`` is set, since it is a diagnostic and comparatively slow.
    """
    V = mesh.vertices
    fv = V[mesh.faces]
    h_F = np.hypot(*(fv[:, 1] - fv[:, 0]).T)
    h_T = np.array([polygon_diameter(mesh.element_vertices(t)) for t in range(mesh.n_elements)])
    area = np.array([signed_area(mesh.element_vertices(t)) for t in range(mesh.n_elements)])
    perim = np.array([h_F[fs].sum() for fs in mesh.element_to_faces])
    reg = float("nan")
    if regularity:
        reg = min(_inradius(mesh.element_vertices(t)) / h_T[t] for t in range(mesh.n_elements))
    return MeshMetrics(
        h_max=float(h_T.max()),
        h_min=float(h_T.min()),
        h_T=h_T,
        h_F=h_F,
        area=area,
        perimeter=perim,
        regularity_estimate=reg,
    )


def characteristic_lengths(mesh: PolyMesh, metrics: MeshMetrics | None = None) -> tuple[float, float]:
    """Return ``(H_min, H_max)`` computed over internal faces."""
    metrics = metrics or compute_metrics(mesh)
    internal = mesh.internal_faces
    if internal.size == 0:
        raise EmptySystemError("mesh has no internal face")
    pairs = np.array([mesh.face_to_elements[f] for f in internal])
    hp, hm = metrics.h_T[pairs[:, 0]], metrics.h_T[pairs[:, 1]]
    H_min = float((hp + hm).min())
    H_max = float(1.0 / (1.0 / hp + 1.0 / hm).max())
    return H_min, H_max


# -- plain-text exchange format ------------------------------------------------------------

def write_polymesh(mesh: PolyMesh, path) -> None:
    lines = [f"POLYMESH2D {len(mesh.vertices)} {mesh.n_elements}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [" ".join(str(i) for i in (len(loop), *loop)) for loop in mesh.elements]
    Path(path).write_text("\n".join(lines) + "\n")


def read_polymesh(path, **kwargs) -> PolyMesh:
    tokens = Path(path).read_text().split("\n")
    header = tokens[0].split()
    if len(header) != 3 or header[0] != "POLYMESH2D":
        raise MeshError(f"{path}: missing POLYMESH2D header")
    nv, nc = int(header[1]), int(header[2])
    body = [line for line in tokens[1:] if line.strip()]
    if len(body) < nv + nc:
        raise MeshError(f"{path}: truncated file")
    verts = [tuple(float(s) for s in line.split()) for line in body[:nv]]
    cells = []
    for line in body[nv:nv + nc]:
        vals = [int(s) for s in line.split()]
        if vals[0] != len(vals) - 1:
            raise MeshError(f"{path}: cell line length mismatch: {line!r}")
        cells.append(vals[1:])
    return build_mesh(verts, cells, insert_hanging=False, **kwargs)
