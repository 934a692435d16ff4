"""Command line entry point ``dwr-adapt``.

    dwr-adapt run <config.ini> --out <dir>
    dwr-adapt uniform <config.ini> --levels N --out <dir>

Exit codes: 0 converged (``uniform``: completed), 2 iteration or dof
budget exhausted, 1 error.  ``DWR_ADAPT_ALPHA`` / ``DWR_ADAPT_EPSILON``
override the configured marking fraction and tolerance.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .driver import RunFailed, adaptive_loop, build_adapter, build_mesh, run_uniform, write_outputs

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_MAX_ITERATIONS = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dwr-adapt", description="Goal-oriented adaptive finite element runs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="adaptive refinement driven by the DWR estimator")
    run.add_argument("config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--no-vtk", action="store_true", help="skip the per-iteration VTK files")
    uni = sub.add_parser("uniform", help="uniform-refinement baseline")
    uni.add_argument("config")
    uni.add_argument("--levels", type=int, required=True, help="number of meshes (initial + refinements)")
    uni.add_argument("--out", required=True, help="output directory")
    uni.add_argument("--no-vtk", action="store_true", help="skip the per-level VTK files")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_env_overrides()
        adapter = build_adapter(cfg)
        mesh = build_mesh(cfg)
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"dwr-adapt: configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "run":
            history = adaptive_loop(cfg, mesh, adapter)
        else:
            if args.levels < 1:
                print("dwr-adapt: --levels must be >= 1", file=sys.stderr)
                return EXIT_ERROR
            history = run_uniform(cfg, args.levels, mesh, adapter)
    except RunFailed as exc:
        write_outputs(exc.history, args.out, adapter, vtk=not args.no_vtk)
        print(f"dwr-adapt: run failed after {len(exc.history)} iteration(s): {exc}", file=sys.stderr)
        return EXIT_ERROR
    write_outputs(history, args.out, adapter, vtk=not args.no_vtk)
    for r in history:
        rel = "" if r.relative_error is None else f"  rel.err={r.relative_error:.3e}"
        print(f"{r.iteration:3d}  cells={r.cells:7d}  dofs={r.dofs:8d}  J={r.J_value:.10g}  "
              f"eta={r.eta_global:.3e}{rel}")
    if history.model_error is not None:
        print(f"reference J={history.reference_value:.10g}  model error={history.model_error:.3e}")
    return EXIT_CONVERGED if history.converged else EXIT_MAX_ITERATIONS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
