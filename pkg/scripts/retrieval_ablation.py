"""Ablate human batch scheduling and prompt-example retrieval.

The low annotator here gets more accurate as its retrieved in-context
examples get more similar to the query, so this matrix shows what the
geometric human schedule and similarity retrieval are each worth.

    python3 scripts/retrieval_ablation.py --trials 5 --seed 0
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from labelloop.bench import paired_gaps, retrieval_matrix
from labelloop.harness import run_matrix
from labelloop.metrics import Metric


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--corners-only", action="store_true",
                        help="run just variable+similar vs equal+random")
    parser.add_argument("--json", default=None, metavar="PATH")
    args = parser.parse_args(argv)

    matrix = retrieval_matrix(trials=args.trials, seed=args.seed, corners_only=args.corners_only)
    t0 = time.time()
    report = run_matrix(matrix, workers=args.workers)
    print(report.render_text())
    print(f"\n{args.trials} trials per arm, {time.time() - t0:.0f}s")

    gaps = 100 * paired_gaps(report, "variable_similar", "equal_random", Metric.ACCURACY)
    print(f"\nvariable+similar vs equal+random: {gaps.mean():+6.2f} points "
          f"(min {gaps.min():+6.2f}, max {gaps.max():+6.2f})")

    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        print(f"raw report written to {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
