#!/usr/bin/env python3
"""Reproduce the Maze reward-weight calibration.

The weight vector has the shape (1, x, y) scaled so that the belief-grid optimum
over T=100 steps equals 47.83. For each candidate shape we report the values of
the memoryless and (optionally) 10-FSC forward solutions. The shipped weights
use x=300, y=20.

    python scripts/calibrate_maze.py --shape 300 20 --fsc
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pomirl.envs import maze
from pomirl.pipeline import forward, make_problem, true_value
from pomirl.scp import ScpParams
from pomirl.sim import belief_grid_oracle

OPTIMUM = 47.83


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--shape", nargs=2, type=float, action="append", metavar=("X", "Y"),
                    help="target and bad weights relative to a unit time weight (repeatable)")
    ap.add_argument("--resolution", type=int, default=16, help="belief-grid resolution")
    ap.add_argument("--fsc", action="store_true", help="also solve the 10-FSC forward problem (slow)")
    ap.add_argument("--backend", default="highs-warm")
    args = ap.parse_args()

    b = maze()
    p, phi = b.model, b.features
    for x, y in args.shape or [(300.0, 20.0)]:
        unit = np.array([1.0, x, y])
        oracle = belief_grid_oracle(p, unit, phi, resolution=args.resolution).value
        theta = OPTIMUM / oracle * unit
        params = ScpParams(backend=args.backend)
        row = {"x": x, "y": y, "theta": np.round(theta, 8).tolist()}
        t0 = time.perf_counter()
        pol, _ = forward(make_problem(p, phi, 1), theta, params)
        row["memoryless"] = round(true_value(p, pol, theta, phi), 3)
        row["memoryless_s"] = round(time.perf_counter() - t0, 1)
        if args.fsc:
            t0 = time.perf_counter()
            fsc, _ = forward(make_problem(p, phi, 10), theta, params)
            row["fsc10"] = round(true_value(p, fsc, theta, phi), 3)
            row["fsc10_s"] = round(time.perf_counter() - t0, 1)
        print(row, flush=True)


if __name__ == "__main__":
    main()
