"""Experiment runner: mesh sweeps, spectra, energy errors, CSV output."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import meshes
from .assembly import assemble_condensed, energy_error, recover, solve
from .local import VARIANTS, ConfigurationError, LocalSpace, NumericalError, check_admissible
from .mesh import MeshError, compute_metrics
from .quadrature import DegenerateDomainError
from .spectral import EigenSolverError, spectral_report

logger = logging.getLogger(__name__)

EXPERIMENTS = ("coarsened", "ksweep", "cut_eps", "cut_refine", "penta", "convergence")
COLUMNS = ["hMin", "hMax", "NbCells", "NbInternalEdges", "Epsilon", "MinEig", "MaxEig", "Condition", "EnergyError"]
AGGREGATION = {"none": None, "sliver": 0.0, "full": 0.3}

# errors that abort a single row; anything else is a bug and propagates
ROW_ERRORS = (NumericalError, EigenSolverError, DegenerateDomainError, MeshError,
              meshes.MergeError, meshes.AggregationError, np.linalg.LinAlgError)


def exact_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def source_term(x, y):
    return 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass
class ExperimentConfig:
    experiment: str = "convergence"
    k: list = field(default_factory=lambda: [0])
    l_mode: str = "k"
    stab: list = field(default_factory=lambda: ["main"])
    n: list = field(default_factory=lambda: [4, 8, 16, 32])
    eps: list = field(default_factory=list)
    levels: list = field(default_factory=lambda: [0])
    mesh: str = "cartesian"           # base family for coarsened / convergence
    aggregate: str = "none"           # none | sliver | full (cut experiments)
    epsilon1: float = 0.05
    basis: str = "orthonormal"
    out: str = "results.csv"
    threads: int = 1
    dense_threshold: int = 2000
    gnuplot: str = ""

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.mesh not in ("cartesian", "triangular"):
            raise ConfigurationError(f"unknown mesh family {self.mesh!r}")
        if self.aggregate not in AGGREGATION:
            raise ConfigurationError(f"unknown aggregation mode {self.aggregate!r}")
        if self.basis not in ("orthonormal", "raw"):
            raise ConfigurationError(f"unknown basis mode {self.basis!r}")
        if not self.k or not self.stab or not self.n:
            raise ConfigurationError("k, stab and n need at least one value each")
        for k in self.k:
            if not 0 <= k <= 9:
                raise ConfigurationError(f"k={k} outside 0..9")
            space = LocalSpace.from_mode(k, self.l_mode)
            for s in self.stab:
                if s not in VARIANTS:
                    raise ConfigurationError(f"unknown stabilisation {s!r}")
                check_admissible(space, s)
        if self.experiment == "cut_eps":
            if not self.eps:
                raise ConfigurationError("cut_eps needs at least one eps value")
            for n in self.n:
                for e in self.eps:
                    if not 0 < e < 1.0 / n:
                        raise ConfigurationError(f"eps={e} outside (0, 1/n) for n={n}")
        if self.experiment == "penta" and min(self.n) < 5:
            raise ConfigurationError("penta meshes need n >= 5")
        if min(self.n) < 1 or min(self.levels) < 0 or self.threads < 1:
            raise ConfigurationError("n, levels and threads must be positive")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    series: dict                       # series label -> list of row dicts
    slopes: dict                       # series label -> {quantity: value}
    failures: list                     # (series, mesh name, reason)
    files: list


def fit_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need at least three data pairs")
    if (xs <= 0).any() or (ys <= 0).any():
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def relative_spread(values) -> float:
    """(max - min) / min."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.min())


# -- mesh sequences -------------------------------------------------------------------------

def _base_mesh(family: str, n: int):
    return meshes.cartesian_mesh(n) if family == "cartesian" else meshes.triangular_mesh(n)


def _aggregated(mesh, classification, mode: str, epsilon1: float):
    eps2 = AGGREGATION[mode]
    if eps2 is None:
        return mesh
    return meshes.aggregate(mesh, classification, epsilon1=epsilon1, epsilon2=eps2)[0]


def mesh_sequence(cfg: ExperimentConfig):
    """Yield ``(mesh_factory, epsilon)``; factories run lazily so a bad mesh only costs its row."""
    if cfg.experiment in ("coarsened", "ksweep"):
        for n in cfg.n:
            for lev in cfg.levels:
                yield (lambda n=n, lev=lev: meshes.coarsen(_base_mesh(cfg.mesh, n), lev)), None
    elif cfg.experiment == "convergence":
        for n in cfg.n:
            yield (lambda n=n: _base_mesh(cfg.mesh, n)), None
    elif cfg.experiment == "cut_eps":
        for n in cfg.n:
            for e in cfg.eps:
                def make(n=n, e=e):
                    m, cl = meshes.cut_strip_mesh(n, e, with_classification=True)
                    return _aggregated(m, cl, cfg.aggregate, cfg.epsilon1)
                yield make, e
    elif cfg.experiment == "cut_refine":
        for n in cfg.n:
            def make(n=n):
                m, cl = meshes.cut_circle_mesh(n)
                return _aggregated(m, cl, cfg.aggregate, cfg.epsilon1)
            yield make, None
    elif cfg.experiment == "penta":
        for n in cfg.n:
            yield (lambda n=n: meshes.penta_diagonal_mesh(n)), None


def measure(mesh, k: int, l_mode: str, stab: str, *, basis="orthonormal", epsilon=None,
            with_error=False, threads=1, dense_threshold=2000) -> dict:
    """One CSV row: mesh sizes, extreme eigenvalues and optionally the energy error."""
    space = LocalSpace.from_mode(k, l_mode)
    metrics = compute_metrics(mesh)
    system = assemble_condensed(mesh, k, space.l, stab, source_term if with_error else None,
                                basis=basis, threads=threads)
    rep = spectral_report(system, metrics, dense_threshold)
    err = ""
    if with_error:
        sol = recover(system, solve(system, dense_threshold))
        err = energy_error(system, sol, exact_solution)
    return {
        "hMin": metrics.h_min, "hMax": metrics.h_max, "NbCells": mesh.n_elements,
        "NbInternalEdges": int(mesh.internal_faces.size), "Epsilon": "" if epsilon is None else epsilon,
        "MinEig": rep.lambda_min, "MaxEig": rep.lambda_max, "Condition": rep.kappa, "EnergyError": err,
        "k": k, "H_min": rep.H_min, "H_max": rep.H_max,
    }


def _summarise(cfg: ExperimentConfig, rows: list) -> dict:
    out = {}
    if len(rows) < 3:
        return out
    col = {c: np.array([r[c] for r in rows], dtype=float) for c in ("hMin", "hMax", "MinEig", "MaxEig", "Condition")}
    e = cfg.experiment
    if e in ("coarsened", "convergence", "cut_refine"):
        out["kappa_vs_1/h"] = fit_slope(1 / col["hMax"], col["Condition"])
        out["lambda_min_vs_h"] = fit_slope(col["hMax"], col["MinEig"])
        out["lambda_max_vs_1/h"] = fit_slope(1 / col["hMax"], col["MaxEig"])
        if e == "convergence":
            out["error_vs_h"] = fit_slope(col["hMax"], [r["EnergyError"] for r in rows])
    elif e == "ksweep":
        kp1 = np.array([r["k"] + 1 for r in rows], dtype=float)
        out["lambda_max_vs_k+1"] = fit_slope(kp1, col["MaxEig"])
        out["kappa_vs_k+1"] = fit_slope(kp1, col["Condition"])
        out["lambda_min_spread"] = relative_spread(col["MinEig"])
    elif e == "cut_eps":
        inv = 1 / np.array([r["Epsilon"] for r in rows], dtype=float)
        out["lambda_max_vs_1/eps"] = fit_slope(inv, col["MaxEig"])
        out["kappa_vs_1/eps"] = fit_slope(inv, col["Condition"])
        for c in ("MinEig", "MaxEig", "Condition"):
            out[f"{c}_spread"] = relative_spread(col[c])
    elif e == "penta":
        out["kappa_vs_1/hmin"] = fit_slope(1 / col["hMin"], col["Condition"])
        out["lambda_min_ratio"] = float(col["MinEig"].max() / col["MinEig"].min())
    return out


def _series_path(out: str, label: str, many: bool) -> Path:
    p = Path(out)
    return p if not many else p.with_name(f"{p.stem}_{label}{p.suffix or '.csv'}")


def write_rows(path, rows: list, columns=COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])


def gnuplot_script(cfg: ExperimentConfig, files: list) -> str:
    x = {"ksweep": "k", "cut_eps": "Epsilon", "penta": "hMin"}.get(cfg.experiment, "hMax")
    lines = ["set datafile separator ','", "set logscale xy", "set key autotitle columnhead",
             f"set xlabel '{x}'", "set ylabel 'Condition'"]
    plots = [f"'{f}' using '{x}':'Condition' with linespoints" for f in files]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    series: dict = {}
    failures = []
    with_error = cfg.experiment == "convergence"
    if cfg.experiment == "ksweep":
        labels = [(s, [(k, s) for k in cfg.k]) for s in cfg.stab]
    else:
        labels = [(f"k{k}_{s}", [(k, s)]) for k in cfg.k for s in cfg.stab]
    built: list = []
    for factory, eps in mesh_sequence(cfg):
        try:
            built.append((factory(), eps))
        except ROW_ERRORS as exc:
            logger.error("mesh generation failed: %s", exc)
            failures.append(("*", "mesh", str(exc)))
    for label, runs in labels:
        rows = []
        for mesh, eps in built:
            for k, s in runs:
                try:
                    rows.append(measure(mesh, k, cfg.l_mode, s, basis=cfg.basis, epsilon=eps, with_error=with_error,
                                        threads=cfg.threads, dense_threshold=cfg.dense_threshold))
                except ROW_ERRORS as exc:
                    logger.error("row %s k=%d stab=%s aborted: %s", mesh.name, k, s, exc)
                    failures.append((label, mesh.name, str(exc)))
        series[label] = rows
    files = []
    many = len(series) > 1
    for label, rows in series.items():
        path = _series_path(cfg.out, label, many)
        path.parent.mkdir(parents=True, exist_ok=True)
        # the degree is the sweep variable of ksweep, so it gets its own column
        write_rows(path, rows, COLUMNS + ["k"] if cfg.experiment == "ksweep" else COLUMNS)
        files.append(str(path))
    slopes = {label: _summarise(cfg, rows) for label, rows in series.items()}
    if cfg.gnuplot:
        Path(cfg.gnuplot).write_text(gnuplot_script(cfg, files))
    return ExperimentResult(cfg, series, slopes, failures, files)


def format_summary(result: ExperimentResult) -> str:
    lines = []
    for label, sl in result.slopes.items():
        n = len(result.series[label])
        parts = [f"{q}={v:.3f}" for q, v in sl.items() if math.isfinite(v)]
        lines.append(f"{label}: {n} rows" + (", " + ", ".join(parts) if parts else ""))
    for label, name, reason in result.failures:
        lines.append(f"FAILED {label} {name}: {reason}")
    return "\n".join(lines)

