"""Hybrid high-order discretisation of the 2D Poisson problem on polygonal meshes,
with tools to measure the conditioning of the statically condensed system."""

from .assembly import assemble_condensed, assemble_full, energy_error, recover, solve
from .experiments import ExperimentConfig, fit_slope, run_experiment
from .local import ConfigurationError, LocalSpace, NumericalError
from .mesh import EmptySystemError, MeshError, PolyMesh, build_mesh, characteristic_lengths, compute_metrics
from .meshes import (
    aggregate,
    cartesian_mesh,
    coarsen,
    cut_circle_mesh,
    cut_strip_mesh,
    penta_diagonal_mesh,
    triangular_mesh,
)
from .spectral import SpectralReport, extreme_eigenvalues, spectral_report

__version__ = "0.1.0"
