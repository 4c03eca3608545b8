"""Trainable target model behind a small adapter interface.

The built-in reference learner is multinomial logistic regression over the
embedding features, trained by full-batch gradient descent. Each round it
continues from the previous round's parameters (warm start) and minimizes

    mean-loss(high batch) + mean-loss(low batch) + (l2/2)*||W||^2

i.e. the two subsets are normalized by their own sizes and summed, not pooled
into one mean. That normalization is load-bearing: it fixes the relative
weight of scarce high-fidelity labels against plentiful noisy ones.
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import LabelSet, LoopError, Sample
from .embed import EmbeddingStore

SNAPSHOT_VERSION = 1

TrainBatch = Sequence[tuple[str, str]]  # (sample_id, label)


class LearnerError(LoopError):
    pass


@dataclass(frozen=True, slots=True)
class LearnerHyper:
    lr: float = 0.5
    epochs: int = 100
    l2: float = 1e-4


@dataclass(frozen=True)
class LearnerSnapshot:
    id: str
    round: int
    weights: np.ndarray  # (n_labels, dim + 1), bias in the last column
    hyper: LearnerHyper

    def to_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "id": self.id,
            "round": self.round,
            "dim": int(self.weights.shape[1] - 1),
            "n_labels": int(self.weights.shape[0]),
            "hyper": {"lr": self.hyper.lr, "epochs": self.hyper.epochs, "l2": self.hyper.l2},
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerSnapshot":
        version = data.get("version")
        if version != SNAPSHOT_VERSION:
            raise LearnerError(f"snapshot version {version!r} not supported (expected {SNAPSHOT_VERSION})")
        hyper = LearnerHyper(**data["hyper"])
        weights = np.asarray(data["weights"], dtype=np.float64)
        if weights.shape != (data["n_labels"], data["dim"] + 1):
            raise LearnerError("snapshot weight shape does not match its header")
        return cls(id=data["id"], round=data["round"], weights=weights, hyper=hyper)


class Learner(Protocol):
    labelset: LabelSet

    def init_tune(self, warmstart: TrainBatch) -> LearnerSnapshot: ...

    def round_tune(self, high: TrainBatch, low: TrainBatch, round: int) -> LearnerSnapshot: ...

    def predict(self, sample: Sample) -> tuple[np.ndarray, list[float]]: ...

    def snapshot(self) -> LearnerSnapshot: ...

    def restore(self, snapshot_id: str) -> None: ...


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ReferenceLearner:
    """Softmax regression over stored embeddings; convex, cheap, deterministic."""

    def __init__(self, labelset: LabelSet, store: EmbeddingStore, hyper: LearnerHyper | None = None) -> None:
        self.labelset = labelset
        self.store = store
        self.hyper = hyper or LearnerHyper()
        self.weights = np.zeros((len(labelset), store.encoder.dim + 1), dtype=np.float64)
        self.round = 0
        self._snapshots: dict[str, LearnerSnapshot] = {}

    # -- features ------------------------------------------------------

    def _features(self, sample_ids: Sequence[str]) -> np.ndarray:
        mat = self.store.matrix(sample_ids)
        return np.hstack([mat, np.ones((mat.shape[0], 1))])

    def _targets(self, labels: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.labelset.index(lab) for lab in labels], dtype=np.int64)
        except ValueError as exc:
            raise LearnerError(f"label outside the task's label set: {exc}") from exc

    # -- objective -----------------------------------------------------

    def objective(self, weights: np.ndarray, high: TrainBatch, low: TrainBatch) -> float:
        """Sum of the two subsets' mean cross-entropies plus the L2 term.

        Each subset is normalized by its own size (the means are summed, not
        pooled), which is what lets a small clean batch balance a large noisy
        one. Evaluated per sample with an exact sum so duplicating a subset's
        samples provably cannot move its mean.
        """
        total = 0.0
        for batch in (high, low):
            if not batch:
                continue
            losses = []
            for sid, lab in batch:
                phi = self._features([sid])[0]
                dist = softmax(weights @ phi)
                idx = self._targets([lab])[0]
                losses.append(-math.log(float(dist[idx]) + 1e-300))
            total += math.fsum(losses) / len(losses)
        total += 0.5 * self.hyper.l2 * float(np.sum(weights * weights))
        return total

    def gradient(self, weights: np.ndarray, high: TrainBatch, low: TrainBatch) -> np.ndarray:
        grad = np.zeros_like(weights)
        for batch in (high, low):
            if not batch:
                continue
            ids = [sid for sid, _ in batch]
            y = self._targets([lab for _, lab in batch])
            phi = self._features(ids)
            probs = softmax(phi @ weights.T)
            probs[np.arange(len(y)), y] -= 1.0
            grad += (probs.T @ phi) / len(y)
        grad += self.hyper.l2 * weights
        return grad

    # -- training ------------------------------------------------------

    def _descend(self, high: TrainBatch, low: TrainBatch) -> None:
        for _ in range(self.hyper.epochs):
            self.weights -= self.hyper.lr * self.gradient(self.weights, high, low)

    def init_tune(self, warmstart: TrainBatch) -> LearnerSnapshot:
        if not warmstart:
            raise LearnerError("init_tune needs a non-empty warmstart batch")
        self._descend(warmstart, [])
        self.round = 0
        return self.snapshot()

    def round_tune(self, high: TrainBatch, low: TrainBatch, round: int) -> LearnerSnapshot:
        if not high and not low:
            raise LearnerError("round_tune needs at least one non-empty batch")
        self._descend(high, low)
        self.round = round
        return self.snapshot()

    # -- inference -----------------------------------------------------

    def predict(self, sample: Sample) -> tuple[np.ndarray, list[float]]:
        """(distribution over the label set, degenerate one-token logprob list)."""
        phi = self._features([sample.id])[0]
        dist = softmax(self.weights @ phi)
        logprob_top = float(np.log(dist.max() + 1e-300))
        return dist, [logprob_top]

    def predict_proba_many(self, sample_ids: Sequence[str]) -> np.ndarray:
        if len(sample_ids) == 0:
            return np.zeros((0, len(self.labelset)))
        return softmax(self._features(sample_ids) @ self.weights.T)

    def predict_label(self, sample: Sample) -> str:
        dist, _ = self.predict(sample)
        return self.labelset.labels[int(np.argmax(dist))]

    # -- snapshots -----------------------------------------------------

    def snapshot(self) -> LearnerSnapshot:
        # Content-derived id: a resumed run must mint the same ids as the
        # uninterrupted one, so a counter would break replay equivalence.
        digest = hashlib.blake2b(self.weights.tobytes(), digest_size=6).hexdigest()
        snap = LearnerSnapshot(
            id=f"r{self.round}-{digest}",
            round=self.round,
            weights=self.weights.copy(),
            hyper=self.hyper,
        )
        self._snapshots[snap.id] = snap
        return snap

    def restore(self, snapshot_id: str) -> None:
        try:
            snap = self._snapshots[snapshot_id]
        except KeyError:
            raise LearnerError(f"unknown snapshot {snapshot_id!r}") from None
        self.weights = snap.weights.copy()
        self.round = snap.round

    def load_snapshot(self, snap: LearnerSnapshot) -> None:
        if snap.weights.shape != self.weights.shape:
            raise LearnerError(
                f"snapshot shape {snap.weights.shape} does not fit learner {self.weights.shape}"
            )
        self._snapshots[snap.id] = snap
        self.weights = snap.weights.copy()
        self.round = snap.round


def save_snapshot(snap: LearnerSnapshot, path: str | Path) -> None:
    Path(path).write_text(json.dumps(snap.to_dict(), sort_keys=True), encoding="utf-8")


def load_snapshot(path: str | Path) -> LearnerSnapshot:
    return LearnerSnapshot.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ExternalLearnerConfig:
    command: list[str]
    workdir: Path
    probe_ids: list[str] = field(default_factory=list)


class ExternalCommandLearner:
    """File-contract adapter for out-of-process fine-tuning.

    Per tune call: writes `train_high.jsonl`, `train_low.jsonl`, and
    `probe.jsonl` (pool record format) into the workdir, invokes the command,
    then reads `predictions.jsonl` (records with `id` and `probs`, one float
    per label). predict() serves from that probe cache.
    """

    def __init__(self, labelset: LabelSet, pool_samples: dict[str, Sample], config: ExternalLearnerConfig) -> None:
        self.labelset = labelset
        self.samples = pool_samples
        self.config = config
        self.round = 0
        self._probs: dict[str, np.ndarray] = {}
        self._snapshots: dict[str, dict[str, np.ndarray]] = {}

    def _write_batch(self, name: str, batch: TrainBatch) -> None:
        path = self.config.workdir / name
        with path.open("w", encoding="utf-8") as fh:
            for sid, label in batch:
                fh.write(json.dumps({"id": sid, "text": self.samples[sid].text, "label": label}) + "\n")

    def _tune(self, high: TrainBatch, low: TrainBatch) -> None:
        self.config.workdir.mkdir(parents=True, exist_ok=True)
        self._write_batch("train_high.jsonl", high)
        self._write_batch("train_low.jsonl", low)
        with (self.config.workdir / "probe.jsonl").open("w", encoding="utf-8") as fh:
            for sid in self.config.probe_ids:
                fh.write(json.dumps({"id": sid, "text": self.samples[sid].text}) + "\n")
        proc = subprocess.run(self.config.command, cwd=self.config.workdir, capture_output=True, text=True)
        if proc.returncode != 0:
            raise LearnerError(f"external learner failed (rc={proc.returncode}): {proc.stderr.strip()}")
        pred_path = self.config.workdir / "predictions.jsonl"
        if not pred_path.exists():
            raise LearnerError(f"external learner wrote no predictions file at {pred_path}")
        self._probs = {}
        with pred_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                probs = np.asarray(rec["probs"], dtype=np.float64)
                if probs.shape != (len(self.labelset),):
                    raise LearnerError(f"probe record {rec['id']!r} has {probs.shape[0]} probs, expected {len(self.labelset)}")
                self._probs[rec["id"]] = probs

    def init_tune(self, warmstart: TrainBatch) -> LearnerSnapshot:
        self._tune(warmstart, [])
        self.round = 0
        return self.snapshot()

    def round_tune(self, high: TrainBatch, low: TrainBatch, round: int) -> LearnerSnapshot:
        self._tune(high, low)
        self.round = round
        return self.snapshot()

    def predict(self, sample: Sample) -> tuple[np.ndarray, list[float]]:
        if sample.id not in self._probs:
            raise LearnerError(f"sample {sample.id!r} is not in the external learner's probe set")
        dist = self._probs[sample.id]
        return dist, [float(np.log(dist.max() + 1e-300))]

    def snapshot(self) -> LearnerSnapshot:
        probe_mat = (
            np.stack([self._probs[i] for i in sorted(self._probs)])
            if self._probs
            else np.zeros((0, len(self.labelset)))
        )
        digest = hashlib.blake2b(probe_mat.tobytes(), digest_size=6).hexdigest()
        sid = f"r{self.round}-{digest}"
        self._snapshots[sid] = {k: v.copy() for k, v in self._probs.items()}
        return LearnerSnapshot(id=sid, round=self.round, weights=probe_mat, hyper=LearnerHyper())

    def restore(self, snapshot_id: str) -> None:
        try:
            self._probs = {k: v.copy() for k, v in self._snapshots[snapshot_id].items()}
        except KeyError:
            raise LearnerError(f"unknown snapshot {snapshot_id!r}") from None
