"""Shared data model: samples, labels, annotations, pools, and commit logic.

Gold labels are deliberately kept out of `Sample` and live in a gated map on
the pool; only code holding a `GoldAccess` token (oracle-style annotators and
evaluation) can read them. Strategies and learners never see ground truth.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator


class LoopError(Exception):
    """Base class for engine errors."""


class PoolLoadError(LoopError):
    pass


class CommitRejected(LoopError):
    """Whole-batch rejection; no partial state was applied."""


class GoldAccessError(LoopError):
    pass


class Fidelity(enum.Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True, slots=True)
class LabelSet:
    """Finite ordered set of categorical labels."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("label set must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"labels must be distinct, got {self.labels!r}")

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True, slots=True)
class Sample:
    """One unannotated instance. Carries no ground truth."""

    id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)


class GoldAccess:
    """Capability token for reading withheld gold labels.

    Constructed only by oracle/noisy simulation annotators and by evaluation
    code. Passing anything else to gold readers is a bug, not a fallback.
    """

    __slots__ = ("holder",)

    def __init__(self, holder: str) -> None:
        self.holder = holder


@dataclass(frozen=True, slots=True)
class Annotation:
    sample_id: str
    label: str
    fidelity: Fidelity
    source: str
    round: int
    sequence: int = -1  # assigned at commit time; -1 means "not yet committed"


class DataPool:
    """Fixed pool of samples with an ordered set of still-unannotated ids."""

    def __init__(self, samples: Iterable[Sample], gold: dict[str, str] | None = None) -> None:
        self.samples: dict[str, Sample] = {}
        for s in samples:
            if s.id in self.samples:
                raise PoolLoadError(f"duplicate sample id {s.id!r}")
            self.samples[s.id] = s
        # insertion-ordered; values unused
        self.unannotated_ids: dict[str, None] = {sid: None for sid in self.samples}
        self.initial_size = len(self.samples)
        self._gold: dict[str, str] = dict(gold or {})
        unknown = set(self._gold) - set(self.samples)
        if unknown:
            raise PoolLoadError(f"gold labels for unknown ids: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.samples)

    def sample(self, sample_id: str) -> Sample:
        return self.samples[sample_id]

    def has_gold(self, sample_id: str) -> bool:
        return sample_id in self._gold

    def gold_label(self, sample_id: str, access: GoldAccess) -> str | None:
        if not isinstance(access, GoldAccess):
            raise GoldAccessError("gold labels require a GoldAccess token")
        return self._gold.get(sample_id)

    def remove_unannotated(self, sample_id: str) -> None:
        # ids leave this set exactly once, at commit
        del self.unannotated_ids[sample_id]


class AnnotatedSet:
    """All committed annotations, partitioned by fidelity."""

    def __init__(self) -> None:
        self.annotations: dict[str, Annotation] = {}
        self.human_ids: set[str] = set()
        self.llm_ids: set[str] = set()
        self.next_sequence = 0

    def __len__(self) -> int:
        return len(self.annotations)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.annotations

    def by_round(self, rnd: int, fidelity: Fidelity | None = None) -> list[Annotation]:
        out = [a for a in self.annotations.values() if a.round == rnd]
        if fidelity is not None:
            out = [a for a in out if a.fidelity == fidelity]
        out.sort(key=lambda a: a.sequence)
        return out

    def ordered(self) -> list[Annotation]:
        return sorted(self.annotations.values(), key=lambda a: a.sequence)


def commit_annotations(
    pool: DataPool,
    annotated: AnnotatedSet,
    batch: list[Annotation],
    labelset: LabelSet | None = None,
) -> AnnotatedSet:
    """Atomically merge a batch: validate everything, then apply.

    Sequence numbers are assigned here, strictly increasing in submission
    order, so acquisition order is a total order regardless of who produced
    the annotations.
    """
    seen: set[str] = set()
    for ann in batch:
        if ann.sample_id in annotated or ann.sample_id in seen:
            raise CommitRejected(f"sample {ann.sample_id!r} is already annotated; batch rejected")
        if ann.sample_id not in pool.unannotated_ids:
            raise CommitRejected(f"sample {ann.sample_id!r} is not in the unannotated pool; batch rejected")
        if labelset is not None and ann.label not in labelset:
            raise CommitRejected(
                f"label {ann.label!r} for sample {ann.sample_id!r} not in label set {labelset.labels!r}"
            )
        seen.add(ann.sample_id)

    for ann in batch:
        stamped = replace(ann, sequence=annotated.next_sequence)
        annotated.next_sequence += 1
        annotated.annotations[stamped.sample_id] = stamped
        if stamped.fidelity is Fidelity.HIGH:
            annotated.human_ids.add(stamped.sample_id)
        else:
            annotated.llm_ids.add(stamped.sample_id)
        pool.remove_unannotated(stamped.sample_id)
    return annotated


def _record_to_sample(rec: dict, lineno: int) -> tuple[Sample, str | None]:
    if "id" not in rec or "text" not in rec:
        raise PoolLoadError(f"line {lineno}: record must have 'id' and 'text' fields")
    sid = rec["id"]
    text = rec["text"]
    if not isinstance(sid, str) or not isinstance(text, str):
        raise PoolLoadError(f"line {lineno}: 'id' and 'text' must be strings")
    meta = rec.get("meta") or {}
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise PoolLoadError(f"line {lineno}: 'meta' must be a flat string map")
    label = rec.get("label")
    if label is not None and not isinstance(label, str):
        raise PoolLoadError(f"line {lineno}: 'label' must be a string when present")
    return Sample(id=sid, text=text, metadata=dict(meta)), label


def load_pool(path: str | Path, format: str = "jsonl") -> DataPool:
    """Load a fixed pool from a jsonl or csv file.

    Optional per-record labels are stored as withheld gold, never on the
    Sample itself.
    """
    path = Path(path)
    if not path.exists():
        raise PoolLoadError(f"pool file not found: {path}")
    samples: list[Sample] = []
    gold: dict[str, str] = {}
    ids: dict[str, int] = {}

    def add(sample: Sample, label: str | None, lineno: int) -> None:
        if sample.id in ids:
            raise PoolLoadError(f"duplicate id {sample.id!r} on line {lineno} (first seen on line {ids[sample.id]})")
        ids[sample.id] = lineno
        samples.append(sample)
        if label is not None:
            gold[sample.id] = label

    if format == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise PoolLoadError(f"line {lineno}: malformed json ({exc.msg})") from exc
                if not isinstance(rec, dict):
                    raise PoolLoadError(f"line {lineno}: record must be an object")
                sample, label = _record_to_sample(rec, lineno)
                add(sample, label, lineno)
    elif format == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is not None and not {"id", "text"} <= set(reader.fieldnames):
                raise PoolLoadError("csv header must include 'id' and 'text'")
            for lineno, row in enumerate(reader, start=2):
                if row.get("id") is None or row.get("text") is None:
                    raise PoolLoadError(f"line {lineno}: missing id/text cell")
                label = row.get("label") or None
                add(Sample(id=row["id"], text=row["text"]), label, lineno)
    else:
        raise PoolLoadError(f"unknown pool format {format!r} (expected jsonl or csv)")

    return DataPool(samples, gold)
