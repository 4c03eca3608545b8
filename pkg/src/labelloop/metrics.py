"""Classification metrics: accuracy, macro F1, support-weighted F1.

Edge conventions are pinned here because they change small-sample scores:
a class with zero gold support and zero predictions is excluded from the
macro mean entirely; a class that appears (in golds or predictions) but has
no true positives scores F1 = 0 and stays in the mean.
"""

from __future__ import annotations

import enum
from collections import Counter
from typing import Sequence

from .core import LoopError


class Metric(enum.Enum):
    ACCURACY = "accuracy"
    MACRO_F1 = "macro_f1"
    WEIGHTED_F1 = "weighted_f1"


class MetricError(LoopError):
    pass


def _per_class_f1(predictions: Sequence[str], golds: Sequence[str]) -> dict[str, tuple[float, int]]:
    """label -> (f1, gold support) over labels present in golds or predictions."""
    tp: Counter[str] = Counter()
    fp: Counter[str] = Counter()
    fn: Counter[str] = Counter()
    support: Counter[str] = Counter()
    for pred, gold in zip(predictions, golds):
        support[gold] += 1
        if pred == gold:
            tp[gold] += 1
        else:
            fp[pred] += 1
            fn[gold] += 1
    labels = sorted(set(support) | set(fp))
    out: dict[str, tuple[float, int]] = {}
    for label in labels:
        denom = 2 * tp[label] + fp[label] + fn[label]
        f1 = (2 * tp[label] / denom) if denom else 0.0
        out[label] = (f1, support[label])
    return out


def score(predictions: Sequence[str], golds: Sequence[str], metric: Metric) -> float:
    if len(predictions) != len(golds):
        raise MetricError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise MetricError("cannot score an empty prediction list")

    if metric is Metric.ACCURACY:
        return sum(p == g for p, g in zip(predictions, golds)) / len(golds)

    per_class = _per_class_f1(predictions, golds)
    if metric is Metric.MACRO_F1:
        return sum(f1 for f1, _ in per_class.values()) / len(per_class)
    if metric is Metric.WEIGHTED_F1:
        total = sum(sup for _, sup in per_class.values())
        return sum(f1 * sup for f1, sup in per_class.values()) / total
    raise MetricError(f"unknown metric {metric!r}")
