#!/usr/bin/env python3
"""Regenerate the 15-FSC Maze expert used by the IRL acceptance check.

Runs the forward solver on the 15-memory product at the calibrated weights (no
spec) and writes the controller in the CLI's policy format. Takes roughly a
quarter of an hour on one core.

    python scripts/make_maze_expert.py --out tests/data/maze_expert_fsc15.json
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from pomirl.cli import main as cli

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "maze_expert_fsc15.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--memory", type=int, default=15)
    ap.add_argument("--max-iters", type=int, default=300)
    ap.add_argument("--backend", default="highs-warm")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        model = Path(tmp) / "maze.json"
        cli(["gen", "--family", "maze", "--out", str(model)])
        args.out.parent.mkdir(parents=True, exist_ok=True)
        return cli(["forward", "--model", str(model), "--theta-true", "--memory", str(args.memory),
                    "--max-iters", str(args.max_iters), "--backend", args.backend, "--out", str(args.out)])


if __name__ == "__main__":
    raise SystemExit(main())
