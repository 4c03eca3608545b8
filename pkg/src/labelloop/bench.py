"""The desk-scale benchmark: one task family, one tuned engine setup, and the
standard arm sets the experiment scripts and the acceptance gate share.

The task is the 4-class synthetic pool at a separation calibrated so that
training on every gold label reaches roughly 0.95 test accuracy; arms then
compare how well 1000 annotations spend against that ceiling. Constants here
are the tuned defaults; scripts expose them as flags.
"""

from __future__ import annotations

import numpy as np

from .budget import BudgetConfig
from .harness import ExperimentArm, ExperimentMatrix, MatrixReport
from .metrics import Metric
from .orchestrator import RunConfig
from .query import StrategyKind
from .synth import SynthTask, synth_task

SEPARATION = 0.38
N_CLASSES = 4
POOL_AND_TEST = 3750  # 80/20 split: pool 3000, held-out test 750
LOW_ACCURACY = 0.75


def bench_task(seed: int) -> SynthTask:
    return synth_task(N_CLASSES, POOL_AND_TEST, separation=SEPARATION, noise=0.0, seed=seed)


def bench_config(**overrides) -> RunConfig:
    base: dict = dict(
        budget=BudgetConfig(total=1000, human=200, llm=800, rounds=5, warmstart=20),
        strategy=StrategyKind.EEQ,
        low_accuracy=LOW_ACCURACY,
        learner_lr=0.5,
        learner_epochs=200,
        tune_on_cumulative=True,
        kmeans_restarts=5,
    )
    base.update(overrides)
    return RunConfig(**base)


def strategy_matrix(trials: int = 5, seed: int = 0, strategies=()) -> ExperimentMatrix:
    """Every query strategy against the same budget and tasks."""
    names = [k.value for k in StrategyKind] if not strategies else list(strategies)
    arms = tuple(ExperimentArm(n, {"strategy": StrategyKind.parse(n)}) for n in names)
    return ExperimentMatrix(
        base=bench_config(), arms=arms, task=bench_task, trials=trials, seed=seed
    )


def fidelity_matrix(trials: int = 5, seed: int = 0) -> ExperimentMatrix:
    """Multi-fidelity acquisition against single-fidelity spends of the same
    1000 annotations; the single-fidelity arms acquire at random, the plain
    supervised baseline for a fixed labelling budget."""
    warm = bench_config().budget.warmstart
    arms = (
        ExperimentArm("eeq", {}),
        ExperimentArm("random", {"strategy": StrategyKind.RANDOM}),
        ExperimentArm(
            "all_high",
            {
                "strategy": StrategyKind.RANDOM,
                "budget": BudgetConfig(1000, 1000, 0, 5, warmstart=warm),
            },
        ),
        ExperimentArm(
            "all_low",
            {
                "strategy": StrategyKind.RANDOM,
                "budget": BudgetConfig(1000, 0, 1000, 5, warmstart=warm),
            },
        ),
    )
    return ExperimentMatrix(
        base=bench_config(), arms=arms, task=bench_task, trials=trials, seed=seed
    )


def retrieval_matrix(trials: int = 5, seed: int = 0, corners_only: bool = False) -> ExperimentMatrix:
    """Batch mode x prompt retrieval, with the low annotator whose accuracy
    tracks retrieved-context similarity."""
    cells = [
        ("variable_similar", "variable", "similar"),
        ("equal_random", "equal", "random"),
        ("variable_random", "variable", "random"),
        ("equal_similar", "equal", "similar"),
    ]
    if corners_only:
        cells = cells[:2]
    arms = tuple(
        ExperimentArm(name, {"human_mode": mode, "retrieval_mode": retrieval})
        for name, mode, retrieval in cells
    )
    return ExperimentMatrix(
        base=bench_config(low_annotator="retrieval_quality"),
        arms=arms,
        task=bench_task,
        trials=trials,
        seed=seed,
    )


def paired_gaps(report: MatrixReport, a: str, b: str, metric: Metric = Metric.ACCURACY) -> np.ndarray:
    """Per-trial metric differences arm `a` minus arm `b` (tasks are paired)."""
    va = report.arm(a).values(metric)
    vb = report.arm(b).values(metric)
    if len(va) != len(vb):
        raise ValueError(f"arms {a!r} and {b!r} completed different trial counts")
    return np.asarray(va) - np.asarray(vb)
