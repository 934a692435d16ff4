"""Sign-weighted two-goal estimation on the manufactured elasticity problem.

Prints, per adaptive iteration, both goal errors, the combined estimate and
its effectivity, and whether scaling all omegas by 10 changes the marking.
"""
from __future__ import annotations

import argparse

import numpy as np

from dwr_adapt.benchmarks import manufactured_multigoal
from dwr_adapt.mesh import dorfler_mark, refine


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--iterations", type=int, default=6)
    p.add_argument("--alpha", type=float, default=0.5)
    args = p.parse_args()
    prob = manufactured_multigoal(args.n)
    ad1, ad10 = prob.adapter((1.0, 1.0)), prob.adapter((10.0, 10.0))
    mesh = prob.mesh
    print(f"{'it':>3} {'cells':>6} {'err1':>10} {'err2':>10} {'eta_c':>10} {'eff':>6} same-marks")
    for it in range(args.iterations):
        st = ad1.solve(mesh)
        r1, r10 = ad1.estimate(st), ad10.estimate(st)
        errs = prob.exact - r1.extras["components"]
        err_c = r1.extras["weights"] @ errs
        m1, m10 = dorfler_mark(r1.eta_local, args.alpha), dorfler_mark(r10.eta_local, args.alpha)
        print(f"{it:3d} {mesh.num_cells:6d} {errs[0]:10.3e} {errs[1]:10.3e} {r1.eta_global:10.3e} "
              f"{r1.eta_global / abs(err_c):6.3f} {np.array_equal(m1, m10)}")
        mesh = refine(mesh, m1, "bisect")


if __name__ == "__main__":
    main()
