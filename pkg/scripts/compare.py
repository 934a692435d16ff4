"""Adaptive run plus uniform baseline for one configuration.

Writes ``adaptive/`` and ``uniform/`` output directories and prints the
matched-cell-count comparison.  The uniform errors are measured against the
reference value of the adaptive run.

    python3 scripts/compare.py configs/artery.ini --levels 3 --out runs/artery
"""
from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from dwr_adapt.config import load_config
from dwr_adapt.driver import Reference, adaptive_loop, matched_comparison, run_uniform, write_outputs


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3, help="uniform meshes (initial + refinements)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = load_config(args.config).with_env_overrides()

    t = time.perf_counter()
    ada = adaptive_loop(cfg)
    print(f"adaptive: {len(ada)} iterations, status {ada.status}, {time.perf_counter() - t:.1f}s")
    write_outputs(ada, args.out / "adaptive", vtk=False)
    ref = Reference(np.array([ada.reference_value]), ada.reference_dofs) if ada.reference_value is not None else None
    uni = run_uniform(cfg, args.levels, reference=ref)
    write_outputs(uni, args.out / "uniform", vtk=False)

    print(f"{'it':>3} {'cells':>7} {'dofs':>8} {'J':>14} {'eta':>10} {'rel.err':>10} {'eta/err':>8} {'sum/err':>8}")
    for r in ada:
        rel = "" if r.relative_error is None else f"{r.relative_error:10.3e}"
        eff = "" if r.effectivity_global is None else f"{r.effectivity_global:8.2f} {r.effectivity_sum:8.2f}"
        print(f"{r.iteration:3d} {r.cells:7d} {r.dofs:8d} {r.J_value:14.8g} {r.eta_global:10.3e} {rel} {eff}")
    if ada.model_error is not None:
        print(f"reference J = {ada.reference_value:.10g}, deviation from target {ada.model_error:.2%}")
    print("matched comparison (uniform cells, uniform error, adaptive cells, adaptive error):")
    for uc, ue, ac, ae in matched_comparison(ada, uni):
        print(f"  {uc:7d} {ue:10.3e} {ac:7d} {ae:10.3e}  {'adaptive wins' if ae <= ue else 'uniform wins'}")


if __name__ == "__main__":
    main()
