"""Mesh families used by the conditioning experiments.

Agglomerated elements (coarsening, aggregation, penta-diagonal super-elements)
keep every vertex of their constituents along their boundary, so each original
edge survives as a distinct, possibly very small, face.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import PolyMesh, build_mesh, polygon_diameter, signed_area

logger = logging.getLogger(__name__)


class MergeError(ValueError):
    """The union of the given cells is not a single simple polygon."""


class AggregationError(RuntimeError):
    pass


def union_loop(loops) -> list[int]:
    """Boundary loop (CCW) of the union of face-connected CCW loops sharing vertex indices."""
    edges: dict[tuple[int, int], int] = {}
    for loop in loops:
        loop = list(loop)
        for a, b in zip(loop, loop[1:] + loop[:1]):
            if (a, b) in edges:
                raise MergeError("overlapping cells")
            edges[(a, b)] = 1
    nxt: dict[int, int] = {}
    for a, b in edges:
        if (b, a) in edges:
            continue
        if a in nxt:
            raise MergeError("union is pinched at a vertex")
        nxt[a] = b
    if not nxt:
        raise MergeError("empty union")
    start = next(v for loop in loops for v in loop if v in nxt)
    out = [start]
    v = nxt[start]
    while v != start:
        out.append(v)
        v = nxt[v]
        if len(out) > len(nxt):
            raise MergeError("broken boundary chain")
    if len(out) != len(nxt):
        raise MergeError("union has holes or several components")
    return out


def _finalize(vertices: np.ndarray, loops: list[list[int]], name: str) -> PolyMesh:
    used = sorted({v for loop in loops for v in loop})
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return build_mesh(vertices[used], [[int(remap[v]) for v in loop] for loop in loops],
                      insert_hanging=False, name=name)


def _grid(xs: np.ndarray, ys: np.ndarray):
    nx = len(xs)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * nx + i
    return verts, vid


def cartesian_mesh(n: int) -> PolyMesh:
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    verts, vid = _grid(xs, xs)
    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(n) for i in range(n)]
    return build_mesh(verts, cells, insert_hanging=False, name=f"cartesian_{n}")


def triangular_mesh(n: int) -> PolyMesh:
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    verts, vid = _grid(xs, xs)
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells += [[a, b, c], [a, c, d]]
    return build_mesh(verts, cells, insert_hanging=False, name=f"triangular_{n}")


def _shared_lengths(mesh: PolyMesh, owner: np.ndarray) -> dict[tuple[int, int], float]:
    """Total shared boundary length between groups, keyed by ordered group pair."""
    V = mesh.vertices
    out: dict[tuple[int, int], float] = {}
    for f in mesh.internal_faces:
        t0, t1 = mesh.face_to_elements[f]
        g0, g1 = owner[t0], owner[t1]
        if g0 == g1:
            continue
        a, b = mesh.faces[f]
        L = float(np.hypot(*(V[b] - V[a])))
        for key in ((g0, g1), (g1, g0)):
            out[key] = out.get(key, 0.0) + L
    return out


def coarsen(mesh: PolyMesh, levels: int) -> PolyMesh:
    """Agglomerate elements pairwise, ``levels`` times.

    Each level visits elements in index order and pairs every unpaired element
    with the unpaired neighbour sharing the longest interface (lowest index on
    ties). Pairs whose union is not a simple polygon are skipped.
    """
    for level in range(levels):
        n = mesh.n_elements
        shared = _shared_lengths(mesh, np.arange(n))
        nbrs: dict[int, list[tuple[float, int]]] = {}
        for (a, b), L in shared.items():
            nbrs.setdefault(a, []).append((-L, b))
        paired = np.zeros(n, dtype=bool)
        loops = []
        for t in range(n):
            if paired[t]:
                continue
            paired[t] = True
            loop = list(mesh.elements[t])
            for _, s in sorted(nbrs.get(t, [])):
                if paired[s]:
                    continue
                try:
                    loop = union_loop([mesh.elements[t], mesh.elements[s]])
                except MergeError:
                    continue
                paired[s] = True
                break
            loops.append(loop)
        mesh = _finalize(mesh.vertices, loops, f"{mesh.name}_c{level + 1}")
    return mesh


# -- cut meshes -----------------------------------------------------------------------------

@dataclass
class CutClassification:
    """Background-cell status and the cut elements of an active (cut) mesh."""

    status: np.ndarray               # per background cell: "exterior", "interior" or "cut"
    element_of_cell: np.ndarray      # active element containing each background cell (-1 if exterior)
    cut_elements: tuple[int, ...]
    h_background: float              # reference h_max for the small-cut criterion
    h_T: dict = field(default_factory=dict)
    sliver_ratio: dict = field(default_factory=dict)  # |T| / (|dT| h_T)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "status", "element", "h_T", "sliver_ratio"])
            for c, (s, e) in enumerate(zip(self.status, self.element_of_cell)):
                w.writerow([c, s, int(e), self.h_T.get(int(e), ""), self.sliver_ratio.get(int(e), "")])


def _cut_measures(mesh: PolyMesh, elements) -> tuple[dict, dict]:
    hs, ratios = {}, {}
    for t in elements:
        pts = mesh.element_vertices(t)
        h = polygon_diameter(pts)
        perim = float(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T).sum())
        hs[int(t)] = h
        ratios[int(t)] = signed_area(pts) / (perim * h)
    return hs, ratios


def _classification(mesh, status, element_of_cell, h_background) -> CutClassification:
    cut = sorted({int(element_of_cell[c]) for c in np.flatnonzero(status == "cut")})
    hs, ratios = _cut_measures(mesh, cut)
    return CutClassification(status, element_of_cell, tuple(cut), h_background, hs, ratios)


def cut_strip_mesh(n: int, epsilon: float, *, with_classification: bool = False):
    """Cartesian n x n grid of (0, 1)^2 clipped at x = (n-1)/n + epsilon.

    The last grid column becomes a column of epsilon-wide cut cells, each glued
    to a full-size neighbour on its left.
    """
    h = 1.0 / n
    if not (0.0 < epsilon < h):
        raise ValueError("epsilon must lie in (0, 1/n)")
    if epsilon <= 1e-12 * h:
        raise ValueError("epsilon below the collinearity tolerance")
    xs = np.append(np.linspace(0.0, 1.0, n + 1)[:-1], (n - 1) * h + epsilon)
    ys = np.linspace(0.0, 1.0, n + 1)
    verts, vid = _grid(xs, ys)
    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(n) for i in range(n)]
    mesh = build_mesh(verts, cells, insert_hanging=False, name=f"strip_{n}_{epsilon:g}")
    if not with_classification:
        return mesh
    status = np.array(["cut" if i == n - 1 else "interior" for j in range(n) for i in range(n)], dtype=object)
    return mesh, _classification(mesh, status, np.arange(n * n), np.sqrt(2.0) * h)


def cut_circle_mesh(n: int, *, offset=(0.2137, 0.3719)) -> tuple[PolyMesh, CutClassification]:
    """Background grid of spacing 2/n clipped against the unit disc.

    The boundary is the piecewise-linear interpolant of the zero level set of
    x^2 + y^2 - 1 along cell edges. ``offset`` (fractions of a cell) shifts the
    grid so that no grid line is aligned with the disc's symmetry axes.
    """
    s = 2.0 / n
    nc = n + 2
    x0 = -1.0 - (1.0 - offset[0]) * s
    y0 = -1.0 - (1.0 - offset[1]) * s
    xs = x0 + s * np.arange(nc + 1)
    ys = y0 + s * np.arange(nc + 1)
    corners, vid = _grid(xs, ys)
    phi = (corners ** 2).sum(axis=1) - 1.0
    inside = phi < 0.0
    verts = [p for p in corners]
    crossing: dict[tuple[int, int], int] = {}

    def cross_vertex(p: int, q: int) -> int:
        key = (p, q) if p < q else (q, p)
        if key not in crossing:
            a, b = key
            t = phi[a] / (phi[a] - phi[b])
            if t * s <= 1e-12 * s:
                crossing[key] = a
            elif (1 - t) * s <= 1e-12 * s:
                crossing[key] = b
            else:
                crossing[key] = len(verts)
                verts.append(corners[a] + t * (corners[b] - corners[a]))
        return crossing[key]

    status = np.empty(nc * nc, dtype=object)
    element_of_cell = np.full(nc * nc, -1, dtype=np.int64)
    loops = []
    for j in range(nc):
        for i in range(nc):
            c = j * nc + i
            ring = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
            flags = inside[ring]
            if flags.all():
                status[c] = "interior"
                element_of_cell[c] = len(loops)
                loops.append(ring)
                continue
            if not flags.any():
                status[c] = "exterior"
                continue
            if flags[0] == flags[2] and flags[1] == flags[3]:
                raise ValueError(f"background cell {c} is cut into two components")
            loop: list[int] = []
            for m in range(4):
                p, q = ring[m], ring[(m + 1) % 4]
                if flags[m]:
                    loop.append(p)
                if flags[m] != flags[(m + 1) % 4]:
                    loop.append(cross_vertex(p, q))
            loop = [v for idx, v in enumerate(loop) if v != loop[idx - 1]]
            V = np.asarray(verts)
            if len(loop) < 3 or signed_area(V[loop]) < 1e-14:
                status[c] = "exterior"
                continue
            status[c] = "cut"
            element_of_cell[c] = len(loops)
            loops.append(loop)
    V = np.asarray(verts)
    used = sorted({v for loop in loops for v in loop})
    remap = np.full(len(V), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    mesh = build_mesh(V[used], [[int(remap[v]) for v in loop] for loop in loops],
                      insert_hanging=False, name=f"circle_{n}")
    return mesh, _classification(mesh, status, element_of_cell, np.sqrt(2.0) * s)


@dataclass
class AggregationStep:
    element: int          # index (in the input mesh) of the smallest constituent of the ill-posed element
    target: int           # same, for the neighbour it was merged into
    criterion: str        # "sliver" or "small"
    shared_length: float
    iteration: int


@dataclass
class AggregationPlan:
    steps: list = field(default_factory=list)
    iterations: int = 0   # number of passes that performed at least one merge
    classification: CutClassification | None = None  # of the aggregated mesh

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "target", "criterion", "shared_length", "iteration"])
            for s in self.steps:
                w.writerow([s.element, s.target, s.criterion, repr(s.shared_length), s.iteration])


def ill_posed(area: float, perimeter: float, h: float, h_ref: float, epsilon1: float, epsilon2: float) -> str | None:
    if area / perimeter < epsilon1 * h:
        return "sliver"
    if h < epsilon2 * h_ref:
        return "small"
    return None


def aggregate(mesh: PolyMesh, classification: CutClassification, epsilon1: float = 0.05,
              epsilon2: float = 0.3) -> tuple[PolyMesh, AggregationPlan]:
    """Merge sliver-cut and small-cut elements into the neighbour sharing the longest interface.

    Cut elements are visited in index order; passes repeat until none is
    ill-posed. Merged elements keep all faces towards third elements. The plan
    carries the classification of the aggregated mesh.
    Setting ``epsilon2 = 0`` aggregates sliver-cut elements only.
    """
    n = mesh.n_elements
    V = mesh.vertices
    members: dict[int, list[int]] = {t: [t] for t in range(n)}  # group id = smallest member
    owner = np.arange(n)
    loops = {t: list(mesh.elements[t]) for t in range(n)}
    area = {t: signed_area(mesh.element_vertices(t)) for t in range(n)}
    is_cut = {t: t in set(classification.cut_elements) for t in range(n)}
    h_ref = classification.h_background
    face_len = np.hypot(*(V[mesh.faces[:, 1]] - V[mesh.faces[:, 0]]).T)

    def perimeter(g):
        total = 0.0
        for t in members[g]:
            for f in mesh.element_to_faces[t]:
                els = mesh.face_to_elements[f]
                if len(els) == 1 or owner[els[0]] != owner[els[1]]:
                    total += face_len[f]
        return total

    def neighbours(g):
        shared: dict[int, float] = {}
        for t in members[g]:
            for f in mesh.element_to_faces[t]:
                for s in mesh.face_to_elements[f]:
                    o = int(owner[s])
                    if o != g:
                        shared[o] = shared.get(o, 0.0) + face_len[f]
        return sorted(shared.items(), key=lambda kv: (-kv[1], kv[0]))

    plan = AggregationPlan()
    max_passes = len(classification.cut_elements) + 1
    for it in range(1, max_passes + 1):
        changed = False
        for g in sorted(members):
            if g not in members or not is_cut[g]:
                continue
            pts = V[loops[g]]
            h = polygon_diameter(pts)
            why = ill_posed(area[g], perimeter(g), h, h_ref, epsilon1, epsilon2)
            if why is None:
                continue
            for target, L in neighbours(g):
                try:
                    new_loop = union_loop([loops[g], loops[target]])
                except MergeError:
                    continue
                keep, drop = min(g, target), max(g, target)
                loops[keep] = new_loop
                members[keep] = sorted(members[keep] + members.pop(drop))
                owner[members[keep]] = keep
                area[keep] = area[g] + area[target]
                is_cut[keep] = True
                loops.pop(drop)
                plan.steps.append(AggregationStep(g, target, why, float(L), it))
                changed = True
                break
            else:
                raise AggregationError(f"ill-posed element {g} has no admissible neighbour")
        if not changed:
            break
        plan.iterations = it  # passes that merged something; the final clean scan is not counted
    else:
        raise AggregationError("aggregation did not reach a fixed point")

    if not plan.steps:
        plan.classification = classification
        return mesh, plan
    order = sorted(members)
    new_index = {g: i for i, g in enumerate(order)}
    new_mesh = _finalize(V, [loops[g] for g in order], f"{mesh.name}_agg")
    elem = np.array([new_index[int(owner[e])] if e >= 0 else -1 for e in classification.element_of_cell],
                    dtype=np.int64)
    plan.classification = _classification(new_mesh, classification.status, elem, h_ref)
    return new_mesh, plan


def penta_diagonal_mesh(n: int) -> PolyMesh:
    """n x n squares with |i - j| <= 2 kept, the two remaining staircase regions merged."""
    if n < 5:
        raise ValueError("n must be >= 5")
    xs = np.linspace(0.0, 1.0, n + 1)
    verts, vid = _grid(xs, xs)
    small, lower, upper = [], [], []
    for j in range(n):
        for i in range(n):
            cell = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
            (small if abs(i - j) <= 2 else lower if i - j > 2 else upper).append(cell)
    loops = small + [union_loop(lower), union_loop(upper)]
    return _finalize(verts, loops, f"penta_{n}")
