"""Multi-fidelity acquisition vs spending the whole budget at one fidelity.

Four arms over paired tasks: the two-stage selector with the 200/800 split,
the same split acquired at random, all 1000 annotations from the high
annotator, and all 1000 from the noisy one.

    python3 scripts/fidelity_matrix.py --trials 5 --seed 0
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from labelloop.bench import fidelity_matrix, paired_gaps
from labelloop.harness import run_matrix
from labelloop.metrics import Metric


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--json", default=None, metavar="PATH")
    args = parser.parse_args(argv)

    matrix = fidelity_matrix(trials=args.trials, seed=args.seed)
    t0 = time.time()
    report = run_matrix(matrix, workers=args.workers)
    print(report.render_text())
    print(f"\n{args.trials} trials per arm, {time.time() - t0:.0f}s")

    print("\npaired accuracy gaps (points):")
    for a, b in (("eeq", "random"), ("eeq", "all_low"), ("all_high", "eeq")):
        gaps = 100 * paired_gaps(report, a, b, Metric.ACCURACY)
        print(f"  {a} - {b}: {gaps.mean():+6.2f}  (min {gaps.min():+6.2f}, max {gaps.max():+6.2f})")

    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        print(f"raw report written to {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
