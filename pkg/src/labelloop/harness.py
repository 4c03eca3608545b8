"""Seeded experiment matrices: strategy / budget-split / fidelity comparisons.

Each cell is `trials` independent runs; trial t of every arm shares one
generated task (paired comparison), while run seeds differ per arm. Cells
report mean and sample standard deviation per metric; a crashed run marks
its cell failed without stopping the matrix.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from .metrics import Metric
from .orchestrator import Engine, RunConfig
from .seeding import stable_seed
from .synth import SynthTask


@dataclass(frozen=True)
class ExperimentArm:
    name: str
    overrides: dict = field(default_factory=dict)  # RunConfig field replacements


@dataclass(frozen=True)
class ExperimentMatrix:
    base: RunConfig
    arms: tuple[ExperimentArm, ...]
    task: Callable[[int], SynthTask]  # trial seed -> fresh task
    trials: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ValueError(f"arm names must be distinct, got {names}")


@dataclass
class ArmResult:
    name: str
    runs: list[dict]  # per-trial: {"trial", "seed", "metrics"| "error"}

    def values(self, metric: Metric) -> list[float]:
        return [r["metrics"][metric.value] for r in self.runs if "metrics" in r]

    def mean(self, metric: Metric) -> float:
        vals = self.values(metric)
        return sum(vals) / len(vals) if vals else math.nan

    def std(self, metric: Metric) -> float:
        vals = self.values(metric)
        if len(vals) < 2:
            return 0.0
        mu = sum(vals) / len(vals)
        return math.sqrt(sum((v - mu) ** 2 for v in vals) / (len(vals) - 1))

    @property
    def failed(self) -> bool:
        return any("error" in r for r in self.runs)


@dataclass
class MatrixReport:
    arms: list[ArmResult]

    def arm(self, name: str) -> ArmResult:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "arms": [
                {
                    "name": a.name,
                    "runs": a.runs,
                    "summary": {
                        m.value: {"mean": a.mean(m), "std": a.std(m)}
                        for m in Metric
                        if a.values(m)
                    },
                }
                for a in self.arms
            ]
        }

    def render_text(self) -> str:
        metrics = list(Metric)
        header = ["arm"] + [m.value for m in metrics]
        rows = [header]
        for a in self.arms:
            row = [a.name]
            for m in metrics:
                if a.values(m):
                    row.append(f"{100 * a.mean(m):.2f} ± {100 * a.std(m):.2f}")
                else:
                    row.append("failed")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _run_one(matrix: ExperimentMatrix, arm: ExperimentArm, trial: int) -> dict:
    entry: dict = {"trial": trial, "arm": arm.name}
    try:
        task = matrix.task(stable_seed(matrix.seed, "task", trial))
        seed = stable_seed(matrix.seed, "run", arm.name, trial)
        config = dataclasses.replace(matrix.base, seed=seed, **arm.overrides)
        engine = Engine(
            config,
            pool=task.pool,
            labelset=task.labelset,
            test_samples=task.test_samples,
            test_gold=task.test_gold,
        )
        report = engine.run()
        entry["seed"] = seed
        entry["metrics"] = report["test_metrics"]
        entry["rounds"] = len(report["rounds"])
    except Exception as exc:  # cell failure must not sink the matrix
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


def run_matrix(matrix: ExperimentMatrix, workers: int = 1) -> MatrixReport:
    jobs = [(arm, trial) for arm in matrix.arms for trial in range(matrix.trials)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _run_one(matrix, j[0], j[1]), jobs))
    else:
        results = [_run_one(matrix, arm, trial) for arm, trial in jobs]
    by_arm: dict[str, list[dict]] = {a.name: [] for a in matrix.arms}
    for entry in results:
        by_arm[entry.pop("arm")].append(entry)
    return MatrixReport([ArmResult(a.name, by_arm[a.name]) for a in matrix.arms])


def standard_arms(strategies: Sequence[str] = ()) -> tuple[ExperimentArm, ...]:
    """The default strategy comparison: the two-stage selector vs baselines."""
    from .query import StrategyKind

    names = strategies or [k.value for k in StrategyKind]
    return tuple(ExperimentArm(n, {"strategy": StrategyKind.parse(n)}) for n in names)
