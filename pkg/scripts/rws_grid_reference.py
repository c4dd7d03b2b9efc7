"""Recompute the frozen 100-point grid optimum used by the RWS-lite sample-efficiency check.

Usage: python3 scripts/rws_grid_reference.py [--threads N]
"""

import argparse
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from diffarb.arbitration import GridSpec, UpperEvaluator
from diffarb.environments import ExplorationObjective, build_rws, rws_lite_config
from diffarb.mg_solvers import SolveConfig

SOLVE = SolveConfig(lam=0.1, tol=1e-8)


def f_star(theta):
    world = build_rws(rws_lite_config())
    return UpperEvaluator(world.game, world.scheme, ExplorationObjective(world), SOLVE)(theta)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    points = GridSpec(bounds=((0.0, 0.5),), n_points=100).points()
    t0 = time.perf_counter()
    if args.threads > 1:
        with ProcessPoolExecutor(args.threads) as pool:
            values = np.array(list(pool.map(f_star, points)))
    else:
        values = np.array([f_star(p) for p in points])
    best = int(np.argmin(values))
    print(f"best f* = {values[best]!r} at theta = {points[best].tolist()} ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
