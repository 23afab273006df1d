"""Extreme eigenvalues and condition number of the condensed matrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshMetrics, characteristic_lengths, compute_metrics

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralReport:
    lambda_min: float
    lambda_max: float
    kappa: float
    H_min: float
    H_max: float
    h_min: float
    h_max: float
    k: int

    @property
    def bound_lower(self) -> float:
        return self.H_min

    @property
    def bound_upper(self) -> float:
        return (self.k + 1) ** 2 / self.H_max

    @property
    def ratio_min(self) -> float:
        return self.lambda_min / self.H_min

    @property
    def ratio_max(self) -> float:
        return self.lambda_max * self.H_max / (self.k + 1) ** 2


def _residual(A, lam: float, v: np.ndarray) -> float:
    return float(np.linalg.norm(A @ v - lam * v) / (abs(lam) * np.linalg.norm(v)))


def _dense(A) -> tuple[float, float]:
    M = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    ev = sla.eigvalsh(M)
    return float(ev[0]), float(ev[-1])


def _iterative(A) -> tuple[float, float]:
    A = sp.csc_matrix(A)
    lmax, vmax = spla.eigsh(A, k=1, which="LA", tol=1e-13, maxiter=20 * A.shape[0])
    # shift-invert around zero: one sparse factorisation, Lanczos on A^{-1}
    lmin, vmin = spla.eigsh(A, k=1, sigma=0.0, which="LM", tol=1e-13)
    lmin, lmax = float(lmin[0]), float(lmax[0])
    for lam, v in ((lmin, vmin[:, 0]), (lmax, vmax[:, 0])):
        r = _residual(A, lam, v)
        if r > RESIDUAL_TOL:
            raise EigenSolverError(f"eigen-residual {r:.2e} above tolerance for lambda={lam:.3e}")
    return lmin, lmax


def extreme_eigenvalues(A, dense_threshold: int = 2000) -> tuple[float, float]:
    """Smallest and largest eigenvalue of the symmetric matrix ``A``.

    Dense symmetric eigendecomposition up to ``dense_threshold`` unknowns,
    Lanczos (largest) plus shift-invert Lanczos (smallest) above it, with a
    dense fallback if the iteration fails.
    """
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n <= dense_threshold:
        return _dense(A)
    try:
        return _iterative(A)
    except (spla.ArpackNoConvergence, spla.ArpackError, EigenSolverError) as exc:
        logger.warning("iterative eigensolver failed (%s); falling back to the dense path", exc)
        return _dense(A)


def spectral_report(system, metrics: MeshMetrics | None = None, dense_threshold: int = 2000) -> SpectralReport:
    metrics = metrics or compute_metrics(system.mesh)
    H_min, H_max = characteristic_lengths(system.mesh, metrics)
    lmin, lmax = extreme_eigenvalues(system.matrix, dense_threshold)
    return SpectralReport(lmin, lmax, lmax / lmin, H_min, H_max, metrics.h_min, metrics.h_max, system.space.k)
