"""Global assembly of the statically condensed face system, solve and recovery."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .local import (
    CondensedLocal,
    LocalElement,
    LocalOperatorPack,
    LocalSpace,
    NumericalError,
    check_admissible,
    interpolate,
    local_condense,
    local_pack,
    make_element,
)
from .mesh import EmptySystemError, PolyMesh

logger = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000


@dataclass(frozen=True)
class DofMap:
    offsets: np.ndarray   # per mesh face: global offset, -1 on boundary faces
    block: int

    @classmethod
    def build(cls, mesh: PolyMesh, k: int) -> "DofMap":
        offsets = np.full(mesh.n_faces, -1, dtype=np.int64)
        internal = mesh.internal_faces
        offsets[internal] = np.arange(internal.size) * (k + 1)
        return cls(offsets, k + 1)

    @property
    def n_dofs(self) -> int:
        return int((self.offsets >= 0).sum()) * self.block

    def element_dofs(self, mesh: PolyMesh, t: int) -> np.ndarray:
        """Global index of every local face unknown of element ``t`` (-1 where eliminated)."""
        out = []
        for f in mesh.element_to_faces[t]:
            o = self.offsets[f]
            out.append(np.arange(o, o + self.block) if o >= 0 else np.full(self.block, -1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class LocalData:
    element: LocalElement
    pack: LocalOperatorPack
    condensed: CondensedLocal


@dataclass
class CondensedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    space: LocalSpace
    variant: str
    mesh: PolyMesh
    locals: list = field(default_factory=list, repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs


@dataclass
class DiscreteSolution:
    faces: np.ndarray               # (n_faces, k+1), zeros on boundary faces
    elements: list                  # per element coefficient vector (degree l)
    reconstruction: list            # per element coefficients of degree k+1


def build_locals(mesh: PolyMesh, space: LocalSpace, variant: str, f=None, *, basis: str = "orthonormal",
                 face_scaling: str = "element", threads: int = 1) -> list[LocalData]:
    check_admissible(space, variant)
    cache: dict = {}

    def work(t):
        T = make_element(mesh, t, space, basis=basis, face_cache=cache)
        pack = local_pack(T, variant, face_scaling=face_scaling)
        return LocalData(T, pack, local_condense(T, pack.A, f))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, range(mesh.n_elements)))
    return [work(t) for t in range(mesh.n_elements)]


def assemble_condensed(mesh: PolyMesh, k: int, l: int | None = None, variant: str = "main", f=None, *,
                       basis: str = "orthonormal", face_scaling: str = "element", threads: int = 1) -> CondensedSystem:
    """Assemble the face-only system from local Schur complements.

    Boundary-face unknowns are dropped (homogeneous Dirichlet condition).
    """
    space = LocalSpace(k, k if l is None else l)
    check_admissible(space, variant)
    dofmap = DofMap.build(mesh, k)
    N = dofmap.n_dofs
    if N == 0:
        raise EmptySystemError("mesh has no internal face: empty condensed system")
    locs = build_locals(mesh, space, variant, f, basis=basis, face_scaling=face_scaling, threads=threads)
    rows, cols, vals = [], [], []
    rhs = np.zeros(N)
    for t, loc in enumerate(locs):
        g = dofmap.element_dofs(mesh, t)
        keep = np.flatnonzero(g >= 0)
        gk = g[keep]
        block = loc.condensed.schur[np.ix_(keep, keep)]
        rows.append(np.repeat(gk, gk.size))
        cols.append(np.tile(gk, gk.size))
        vals.append(block.ravel())
        np.add.at(rhs, gk, loc.condensed.face_load[keep])
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    meta = {"k": k, "l": space.l, "variant": variant, "mesh": mesh.name, "basis": basis}
    return CondensedSystem(A, rhs, dofmap, space, variant, mesh, locs, meta)


def assemble_full(mesh: PolyMesh, k: int, l: int | None = None, variant: str = "main", f=None, *,
                  basis: str = "orthonormal", locals_: list | None = None):
    """Uncondensed system over element unknowns (first) and internal-face unknowns (after).

    Returns ``(matrix, rhs, n_element_dofs)`` with a dense matrix.
    """
    space = LocalSpace(k, k if l is None else l)
    locs = locals_ if locals_ is not None else build_locals(mesh, space, variant, f, basis=basis)
    dofmap = DofMap.build(mesh, k)
    nT = space.n_T
    n_el = nT * mesh.n_elements
    n = n_el + dofmap.n_dofs
    A = np.zeros((n, n))
    b = np.zeros(n)
    for t, loc in enumerate(locs):
        g = np.concatenate([np.arange(t * nT, (t + 1) * nT), np.where(
            dofmap.element_dofs(mesh, t) >= 0, dofmap.element_dofs(mesh, t) + n_el, -1)])
        keep = np.flatnonzero(g >= 0)
        A[np.ix_(g[keep], g[keep])] += loc.pack.A[np.ix_(keep, keep)]
        b[t * nT:(t + 1) * nT] += loc.condensed.element_load
    return A, b, n_el


def solve(system: CondensedSystem, dense_threshold: int = DENSE_THRESHOLD) -> np.ndarray:
    """Solve the condensed system; raises NumericalError if the residual check fails."""
    A, b = system.matrix, system.rhs
    N = system.n_dofs
    if N == 0:
        raise EmptySystemError("empty condensed system")
    try:
        if N <= dense_threshold:
            u = sla.solve(A.toarray(), b, assume_a="pos")
        else:
            u = spla.splu(A.tocsc()).solve(b)
    except (sla.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"condensed system is numerically singular: {exc}") from exc
    res = np.linalg.norm(A @ u - b)
    nb = np.linalg.norm(b)
    if nb > 0 and res > 1e-10 * nb:
        from .spectral import extreme_eigenvalues

        lmin, _ = extreme_eigenvalues(A)
        raise NumericalError(f"residual {res / nb:.2e} too large (lambda_min ~ {lmin:.3e})")
    return u


def face_values(system: CondensedSystem, u: np.ndarray) -> np.ndarray:
    """Reshape the global vector into per-face coefficient blocks (zero on boundary faces)."""
    dm = system.dofmap
    out = np.zeros((len(dm.offsets), dm.block))
    internal = dm.offsets >= 0
    out[internal] = u.reshape(-1, dm.block)
    return out


def recover(system: CondensedSystem, u: np.ndarray) -> DiscreteSolution:
    """Element unknowns from face unknowns: u_T = lift u_dT + g_T; reconstruction via P."""
    mesh = system.mesh
    fv = face_values(system, u)
    elems, recon = [], []
    for t, loc in enumerate(system.locals):
        uF = fv[mesh.element_to_faces[t]].ravel()
        uT = loc.condensed.lift @ uF + loc.condensed.g
        elems.append(uT)
        recon.append(loc.pack.P @ np.concatenate([uT, uF]))
    return DiscreteSolution(fv, elems, recon)


def local_vector(solution: DiscreteSolution, mesh: PolyMesh, t: int) -> np.ndarray:
    return np.concatenate([solution.elements[t], solution.faces[mesh.element_to_faces[t]].ravel()])


def energy_error(system: CondensedSystem, solution: DiscreteSolution, exact) -> float:
    """a_h(e, e)^(1/2) with e = u_h - I_h u."""
    total = 0.0
    for t, loc in enumerate(system.locals):
        e = local_vector(solution, system.mesh, t) - interpolate(exact, loc.element)
        total += float(e @ loc.pack.A @ e)
    return float(np.sqrt(max(total, 0.0)))


# -- exports ------------------------------------------------------------------------------

def export_matrix_market(system: CondensedSystem, path) -> None:
    import scipy.io

    scipy.io.mmwrite(str(path), sp.coo_matrix(system.matrix), symmetry="symmetric",
                     comment=f"HHO condensed matrix {system.metadata}")


def write_solution_csv(system: CondensedSystem, u: np.ndarray, path) -> None:
    fv = face_values(system, u)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face"] + [f"c{i}" for i in range(fv.shape[1])])
        for f in system.mesh.internal_faces:
            w.writerow([int(f)] + [repr(float(x)) for x in fv[f]])
