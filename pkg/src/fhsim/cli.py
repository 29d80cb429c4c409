"""Command-line entry point: `fhsim run` and `fhsim compare`.

Exit codes: 0 success, 2 configuration error, 3 numeric/protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_limit(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fhsim",
                                description="Programmable Fermi-Hubbard "
                                            "processor simulator")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute one protocol from a config file")
    runp.add_argument("--config", required=True, help="YAML or JSON run config")
    runp.add_argument("--seed", type=int, default=None,
                      help="override optimizer and shot seeds")
    runp.add_argument("--out", default=None, help="output directory override")
    runp.add_argument("--threads", type=int, default=None,
                      help="BLAS/OpenMP thread cap")
    mode = runp.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true",
                      help="force exact expectation values (no shot noise)")
    mode.add_argument("--shots", type=int, default=None,
                      help="enable shot noise with this many samples per object")

    cmpp = sub.add_parser("compare", help="tabulate two finished run bundles")
    cmpp.add_argument("run_a")
    cmpp.add_argument("run_b")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        return _compare(args)
    return _run(args)


def _run(args) -> int:
    if args.threads:
        _apply_thread_limit(args.threads)
    from .config import ConfigError, load_config
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.section("optimizer")["seed"] = args.seed
            config.section("shots")["seed"] = args.seed
        if args.exact:
            config.section("shots")["enabled"] = False
        if args.shots is not None:
            config.section("shots")["enabled"] = True
            config.section("shots")["m"] = args.shots
        out_dir = Path(args.out) if args.out else Path(
            config.section("output")["directory"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    from .hamiltonian import ParameterError
    from .lattice import GeometryError
    from .runners import RunError, execute
    try:
        summary = execute(config, out_dir)
    except (ConfigError, ParameterError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RunError, ArithmeticError, RuntimeError) as exc:
        print(f"run failed [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def _compare(args) -> int:
    from .runners import compare
    try:
        rows = compare(args.run_a, args.run_b)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    width = max(len(r[0]) for r in rows)
    print(f"{'metric':<{width}}  {'run_a':>14}  {'run_b':>14}  better")
    for key, va, vb, better in rows:
        fa = f"{va:.6g}" if isinstance(va, (int, float)) else str(va)
        fb = f"{vb:.6g}" if isinstance(vb, (int, float)) else str(vb)
        print(f"{key:<{width}}  {fa:>14}  {fb:>14}  {better}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
