"""Compare query strategies on the desk-scale benchmark.

Runs every strategy (or a comma-separated subset) over paired synthetic
tasks and prints the mean/std table plus the paired gap of each strategy
against the random baseline.

    python3 scripts/strategy_matrix.py --trials 5 --seed 0
    python3 scripts/strategy_matrix.py --strategies eeq,random,entropy --json out.json
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from labelloop.bench import paired_gaps, strategy_matrix
from labelloop.harness import run_matrix
from labelloop.metrics import Metric


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--strategies", default="", help="comma-separated subset, default all")
    parser.add_argument("--json", default=None, metavar="PATH", help="also dump the raw report")
    args = parser.parse_args(argv)

    wanted = [s for s in args.strategies.split(",") if s.strip()]
    matrix = strategy_matrix(trials=args.trials, seed=args.seed, strategies=wanted)
    t0 = time.time()
    report = run_matrix(matrix, workers=args.workers)
    print(report.render_text())
    print(f"\n{args.trials} trials per arm, {time.time() - t0:.0f}s")

    names = [a.name for a in report.arms]
    if "random" in names:
        print("\npaired accuracy gap vs random (points):")
        for name in names:
            if name == "random" or report.arm(name).failed:
                continue
            gaps = 100 * paired_gaps(report, name, "random", Metric.ACCURACY)
            print(f"  {name:18s} {gaps.mean():+6.2f}  (min {gaps.min():+6.2f}, max {gaps.max():+6.2f})")

    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        print(f"raw report written to {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
