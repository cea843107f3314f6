"""Wong-Zakai convergence on the circle system.

For each smoothing level m the table shows the median over paths of
sup_t |Y^m_t - W_t| and of |X^m_1 - R(W_1) x0|, where X^m solves the ODE
driven by Y^m and R(W_1) x0 is the exact solution of the SDE.

    python scripts/wz_convergence.py --m 2 4 8 16 32 64 128 --paths 100
"""

import argparse

import numpy as np

from invlab import catalog
from invlab.paths import TimeGrid, wong_zakai_bundle, wong_zakai_smooth, wong_zakai_solve


def main():
    ap = argparse.ArgumentParser(description="Wong-Zakai convergence table")
    ap.add_argument("--m", type=int, nargs="+", default=[2, 4, 8, 16, 32, 64])
    ap.add_argument("--paths", type=int, default=100)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    sys = catalog.circle(controls=((1.0,),))
    x0 = np.array([1.0, 0.0])
    bundle = wong_zakai_bundle(1, 1.0, max(args.m), args.seed, args.paths)
    grid = TimeGrid(1.0, bundle.grid.dt)
    W = bundle.W[:, :grid.steps + 1]
    exact = sys.meta["exact"](x0, np.ones(1), W[:, -1, 0])
    print(f"{'m':>5} {'sup|Y-W|':>10} {'|X1-exact|':>11} {'ratio':>7}")
    prev = None
    for m in args.m:
        Y = wong_zakai_smooth(bundle, m, grid).Y
        sup = np.median(np.max(np.abs(Y - W)[..., 0], axis=1))
        X1 = wong_zakai_solve(sys, x0, np.ones(1), m, bundle, grid).final()
        err = np.median(np.linalg.norm(X1 - exact, axis=-1))
        ratio = "" if prev is None else f"{prev / err:7.2f}"
        print(f"{m:5d} {sup:10.4f} {err:11.4f} {ratio:>7}")
        prev = err


if __name__ == "__main__":
    main()
