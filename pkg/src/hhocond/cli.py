"""Command-line driver for the conditioning experiments.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import EXPERIMENTS, ExperimentConfig, format_summary, run_experiment
from .local import L_MODES, VARIANTS, ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

LIST_INT = ("k", "n", "levels")
LIST_FLOAT = ("eps",)
LIST_STR = ("stab",)
SCALAR = {"experiment": str, "l_mode": str, "mesh": str, "aggregate": str, "basis": str, "out": str,
          "threads": int, "dense_threshold": int, "epsilon1": float, "gnuplot": str}


def _ints(text: str) -> list[int]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def parse_value(key: str, text: str):
    try:
        if key in LIST_INT:
            return _ints(text)
        if key in LIST_FLOAT:
            return [float(x) for x in text.replace(" ", "").split(",") if x]
        if key in LIST_STR:
            return [x.strip() for x in text.split(",") if x.strip()]
        if key in SCALAR:
            return SCALAR[key](text.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from exc
    raise ConfigurationError(f"unknown configuration key {key!r}")


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; keys may use - or _."""
    values = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = parse_value(key, val)
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hhocond", description="Condition-number experiments for HHO on polygonal meshes.")
    p.add_argument("config", nargs="?", help="key=value config file (flags override it)")
    p.add_argument("--experiment", help=f"one of {', '.join(EXPERIMENTS)}")
    p.add_argument("--k", help="face degrees, e.g. 0,1,2 or 1..6")
    p.add_argument("--l-mode", dest="l_mode", help=f"element degree relative to k: {', '.join(L_MODES)}")
    p.add_argument("--stab", help=f"stabilisations, comma separated: {', '.join(VARIANTS)}")
    p.add_argument("--n", help="mesh parameters (cells per side), comma separated")
    p.add_argument("--eps", help="cut widths for cut_eps, comma separated")
    p.add_argument("--levels", help="coarsening levels, comma separated (0 = base mesh)")
    p.add_argument("--mesh", help="base family for coarsened/convergence: cartesian or triangular")
    p.add_argument("--aggregate", help="cut experiments: none, sliver or full")
    p.add_argument("--epsilon1", help="sliver threshold for aggregation")
    p.add_argument("--basis", help="orthonormal or raw")
    p.add_argument("--out", help="CSV path (one file per series when several)")
    p.add_argument("--threads", help="worker threads for local assembly")
    p.add_argument("--dense-threshold", dest="dense_threshold", help="largest N handled by the dense eigensolver")
    p.add_argument("--gnuplot", help="also write a gnuplot script to this path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config(args.config) if args.config else {}
    for key in (*LIST_INT, *LIST_FLOAT, *LIST_STR, *SCALAR):
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = parse_value(key, raw)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_experiment(cfg)
    print(format_summary(result))
    for f in result.files:
        print(f"wrote {f}")
    return EXIT_NUMERICAL if result.failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
