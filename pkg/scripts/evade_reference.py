#!/usr/bin/env python3
"""Record the Evade(5, 2, 0.1) reference value used by the scaling smoke test.

Solves the memoryless forward problem with the generator's reward weights
(default solver settings, no spec) and prints the exact T=100 value. The
acceptance suite compares a fresh solve against EVADE_REFERENCE in pomirl.envs.

    python scripts/evade_reference.py
"""

from __future__ import annotations

import argparse
import time

from pomirl.envs import BenchSpec, generate
from pomirl.pipeline import forward, make_problem, true_value
from pomirl.scp import ScpParams


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--backend", default="highs-warm")
    ap.add_argument("--max-iters", type=int, default=300)
    args = ap.parse_args()

    b = generate(BenchSpec("evade", n=5, r=2, slip=0.1))
    theta = b.theta_true.theta
    t0 = time.perf_counter()
    pol, res = forward(make_problem(b.model, b.features, 1), theta,
                       ScpParams(backend=args.backend, max_iters=args.max_iters))
    value = true_value(b.model, pol, theta, b.features)
    print({"states": b.model.n_states, "observations": b.model.n_observations, "status": res.status,
           "iters": len(res.log), "value": round(value, 4), "seconds": round(time.perf_counter() - t0, 1)})


if __name__ == "__main__":
    main()
