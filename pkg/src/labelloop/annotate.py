"""Annotation sources behind one batch interface.

Simulated annotators (oracle, seeded-noise, retrieval-quality) read gold
labels through the pool's capability token and stand in for the expensive
real sources at desk scale. The completion annotator drives a live
chat-completion endpoint with retrieval-built prompts; the queue annotator
blocks on labels submitted by a person through the HTTP service.

Failures are always explicit and per-sample. A failed sample consumes no
budget and is never silently assigned a label.
"""

from __future__ import annotations

import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .core import Annotation, DataPool, Fidelity, GoldAccess, LabelSet, LoopError, Sample
from .embed import RetrievedExample
from .seeding import derive_rng


class AnnotateError(LoopError):
    pass


@dataclass(frozen=True, slots=True)
class AnnotationFailure:
    sample_id: str
    reason: str


@dataclass(frozen=True, slots=True)
class BatchResult:
    annotations: tuple[Annotation, ...]
    failures: tuple[AnnotationFailure, ...] = ()

    def __post_init__(self) -> None:
        done = {a.sample_id for a in self.annotations}
        failed = {f.sample_id for f in self.failures}
        if done & failed:
            raise AnnotateError(f"samples both annotated and failed: {sorted(done & failed)}")


Retriever = Callable[[Sample], list[RetrievedExample]]


@dataclass(frozen=True, slots=True)
class AnnotationContext:
    round: int
    retrieve: Retriever | None = None  # low-fidelity prompt context, refreshed per round
    uncertainty: Mapping[str, float] | None = None  # plan scores, for queue display


class Annotator(Protocol):
    name: str
    fidelity: Fidelity

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult: ...


# -- simulated annotators -------------------------------------------------


class OracleAnnotator:
    """Reads gold labels directly; the stand-in for a perfect human."""

    def __init__(self, pool: DataPool, access: GoldAccess, name: str = "oracle") -> None:
        self.pool = pool
        self.access = access
        self.name = name
        self.fidelity = Fidelity.HIGH

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult:
        annotations, failures = [], []
        for sample in samples:
            gold = self.pool.gold_label(sample.id, self.access)
            if gold is None:
                failures.append(AnnotationFailure(sample.id, "no gold label"))
            else:
                annotations.append(
                    Annotation(sample.id, gold, self.fidelity, self.name, ctx.round)
                )
        return BatchResult(tuple(annotations), tuple(failures))


@dataclass(frozen=True, slots=True)
class NoisyProfile:
    accuracy: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise AnnotateError(f"accuracy {self.accuracy} outside [0, 1]")


def _noisy_label(gold: str, labelset: LabelSet, accuracy: float, *seed_parts: object) -> str:
    rng = derive_rng(*seed_parts)
    if rng.random() < accuracy:
        return gold
    gold_idx = labelset.index(gold)
    j = int(rng.integers(len(labelset) - 1))
    return labelset.labels[j + 1 if j >= gold_idx else j]


class NoisyAnnotator:
    """Gold label with probability `accuracy`, else a uniform wrong label.

    Noise is seeded per (seed, sample id), so the outcome for a sample does
    not depend on its position in the batch or on what else was selected.
    """

    def __init__(
        self,
        pool: DataPool,
        access: GoldAccess,
        labelset: LabelSet,
        profile: NoisyProfile,
        name: str = "noisy",
    ) -> None:
        if len(labelset) < 2 and profile.accuracy < 1.0:
            raise AnnotateError("cannot flip labels in a single-label task")
        self.pool = pool
        self.access = access
        self.labelset = labelset
        self.profile = profile
        self.name = name
        self.fidelity = Fidelity.LOW

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult:
        annotations, failures = [], []
        for sample in samples:
            gold = self.pool.gold_label(sample.id, self.access)
            if gold is None:
                failures.append(AnnotationFailure(sample.id, "no gold label"))
                continue
            label = _noisy_label(
                gold, self.labelset, self.profile.accuracy, self.profile.seed, "noisy", sample.id
            )
            annotations.append(Annotation(sample.id, label, self.fidelity, self.name, ctx.round))
        return BatchResult(tuple(annotations), tuple(failures))


class RetrievalQualityAnnotator:
    """Noisy annotator whose accuracy tracks retrieved-context similarity.

    Models the observation that in-context examples closer to the query give
    better low-fidelity labels: per-sample accuracy is interpolated between
    `floor` (no or unrelated context) and `ceil` (perfectly similar context)
    by the mean similarity of the retrieved examples.
    """

    def __init__(
        self,
        pool: DataPool,
        access: GoldAccess,
        labelset: LabelSet,
        floor: float = 0.55,
        ceil: float = 0.95,
        seed: int = 0,
        name: str = "retrieval_quality",
    ) -> None:
        if not 0.0 <= floor <= ceil <= 1.0:
            raise AnnotateError(f"need 0 <= floor <= ceil <= 1, got ({floor}, {ceil})")
        self.pool = pool
        self.access = access
        self.labelset = labelset
        self.floor = floor
        self.ceil = ceil
        self.seed = seed
        self.name = name
        self.fidelity = Fidelity.LOW

    def _accuracy(self, sample: Sample, ctx: AnnotationContext) -> float:
        examples = ctx.retrieve(sample) if ctx.retrieve is not None else []
        if not examples:
            return self.floor
        sim = sum(max(0.0, min(1.0, e.similarity)) for e in examples) / len(examples)
        return self.floor + (self.ceil - self.floor) * sim

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult:
        annotations, failures = [], []
        for sample in samples:
            gold = self.pool.gold_label(sample.id, self.access)
            if gold is None:
                failures.append(AnnotationFailure(sample.id, "no gold label"))
                continue
            label = _noisy_label(
                gold, self.labelset, self._accuracy(sample, ctx), self.seed, "ctxq", sample.id
            )
            annotations.append(Annotation(sample.id, label, self.fidelity, self.name, ctx.round))
        return BatchResult(tuple(annotations), tuple(failures))


# -- prompt construction ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    instruction: str
    example_format: str  # must contain {text} and {label}
    query_format: str  # must contain {text}
    label_parse: LabelSet

    def __post_init__(self) -> None:
        for slot, where in (("{text}", self.example_format), ("{label}", self.example_format)):
            if slot not in where:
                raise AnnotateError(f"example_format is missing the {slot} slot")
        if "{text}" not in self.query_format:
            raise AnnotateError("query_format is missing the {text} slot")


def default_template(labelset: LabelSet) -> PromptTemplate:
    labels = ", ".join(labelset.labels)
    return PromptTemplate(
        instruction=f"Classify the text. Answer with exactly one of: {labels}.",
        example_format="Text: {text}\nLabel: {label}",
        query_format="Text: {text}\nLabel:",
        label_parse=labelset,
    )


def load_template(path: str | Path, labelset: LabelSet) -> PromptTemplate:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotateError(f"cannot load template {path}: {exc}") from exc
    missing = {"instruction", "example_format", "query_format"} - data.keys()
    if missing:
        raise AnnotateError(f"template {path} is missing keys: {sorted(missing)}")
    return PromptTemplate(
        instruction=data["instruction"],
        example_format=data["example_format"],
        query_format=data["query_format"],
        label_parse=labelset,
    )


def build_prompt(
    query: Sample, examples: Sequence[tuple[Sample, str]], template: PromptTemplate
) -> str:
    """Instruction, then examples most-similar first, then the query."""
    parts = [template.instruction]
    for sample, label in examples:
        parts.append(template.example_format.format(text=sample.text, label=label))
    parts.append(template.query_format.format(text=query.text))
    return "\n\n".join(parts)


def parse_label(response: str, labelset: LabelSet) -> str | None:
    """Earliest label occurrence wins; at equal positions the longest label."""
    best: tuple[int, int, str] | None = None
    for label in labelset.labels:
        match = re.search(rf"\b{re.escape(label)}\b", response, re.IGNORECASE)
        if match is None:
            continue
        key = (match.start(), -len(label))
        if best is None or key < (best[0], best[1]):
            best = (key[0], key[1], label)
    return best[2] if best else None


# -- completion-endpoint annotator -----------------------------------------


@dataclass(frozen=True, slots=True)
class ClientConfig:
    base_url: str
    model: str
    retries: int = 2
    max_inflight: int = 4
    timeout_ms: int = 30000
    backoff_s: float = 0.25  # doubled per retry; zero in tests


class CompletionAnnotator:
    """Labels samples through a chat-completion endpoint, few-shot prompted.

    Each sample gets retrieval context from the current high-fidelity set,
    a deterministic prompt (temperature 0), and up to retries+1 attempts
    covering both transport errors and unparseable responses.
    """

    def __init__(
        self,
        config: ClientConfig,
        template: PromptTemplate,
        name: str = "completion",
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.config = config
        self.template = template
        self.name = name
        self.fidelity = Fidelity.LOW
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _complete(self, prompt: str) -> str:
        resp = self._client.post(
            "/chat/completions",
            json={
                "model": self.config.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            },
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def _annotate_one(self, sample: Sample, ctx: AnnotationContext) -> Annotation | AnnotationFailure:
        examples = ctx.retrieve(sample) if ctx.retrieve is not None else []
        prompt = build_prompt(sample, [(e.sample, e.label) for e in examples], self.template)
        last = "no attempts made"
        for attempt in range(self.config.retries + 1):
            if attempt > 0 and self.config.backoff_s > 0:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                text = self._complete(prompt)
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last = f"request failed: {exc}"
                continue
            label = parse_label(text, self.template.label_parse)
            if label is None:
                last = f"unparseable response: {text[:80]!r}"
                continue
            return Annotation(sample.id, label, self.fidelity, self.name, ctx.round)
        return AnnotationFailure(sample.id, last)

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult:
        if self.config.max_inflight > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=self.config.max_inflight) as pool:
                results = list(pool.map(lambda s: self._annotate_one(s, ctx), samples))
        else:
            results = [self._annotate_one(s, ctx) for s in samples]
        # commit in sample-id order regardless of arrival order
        results.sort(key=lambda r: r.sample_id)
        annotations = tuple(r for r in results if isinstance(r, Annotation))
        failures = tuple(r for r in results if isinstance(r, AnnotationFailure))
        return BatchResult(annotations, failures)


# -- live human queue -------------------------------------------------------


class SubmitStatus(Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"  # same id, same label: idempotent no-op
    CONFLICT = "conflict"  # same id, different label
    UNKNOWN = "unknown"  # id not pending
    INVALID = "invalid"  # label outside the set


@dataclass(frozen=True, slots=True)
class PendingItem:
    sample_id: str
    text: str
    uncertainty: float
    round: int
    context: tuple[tuple[str, str], ...] = ()  # (text, label) nearest labeled examples


@dataclass
class HumanQueue:
    """Thread-safe pending queue bridging the orchestrator and the service."""

    labelset: LabelSet
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _cond: threading.Condition = field(init=False)
    _pending: dict[str, PendingItem] = field(default_factory=dict)
    _labels: dict[str, tuple[str, str]] = field(default_factory=dict)  # id -> (label, who)
    _closed: bool = False

    def __post_init__(self) -> None:
        self._cond = threading.Condition(self._lock)

    def offer(self, items: Sequence[PendingItem]) -> None:
        with self._cond:
            for item in items:
                self._pending[item.sample_id] = item
            self._cond.notify_all()

    def pending_items(self) -> list[PendingItem]:
        with self._cond:
            return list(self._pending.values())

    def wait_for_items(self, timeout_s: float) -> list[PendingItem]:
        with self._cond:
            self._cond.wait_for(lambda: self._pending or self._closed, timeout=timeout_s)
            return list(self._pending.values())

    def submit(self, sample_id: str, label: str, who: str) -> SubmitStatus:
        with self._cond:
            if label not in self.labelset:
                return SubmitStatus.INVALID
            if sample_id in self._labels:
                prev_label, _ = self._labels[sample_id]
                return SubmitStatus.DUPLICATE if prev_label == label else SubmitStatus.CONFLICT
            if sample_id not in self._pending:
                return SubmitStatus.UNKNOWN
            self._labels[sample_id] = (label, who)
            del self._pending[sample_id]
            self._cond.notify_all()
            return SubmitStatus.ACCEPTED

    def wait_done(self, sample_ids: Sequence[str], timeout_s: float | None) -> dict[str, tuple[str, str]]:
        wanted = set(sample_ids)
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        with self._cond:
            while True:
                have = {i: self._labels[i] for i in wanted if i in self._labels}
                if len(have) == len(wanted) or self._closed:
                    return have
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return have
                self._cond.wait(timeout=remaining)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._pending.clear()
            self._cond.notify_all()


class HumanQueueAnnotator:
    """Blocks on a person labeling through the service's queue endpoints."""

    def __init__(self, queue: HumanQueue, timeout_s: float | None = None, name: str = "human") -> None:
        self.queue = queue
        self.timeout_s = timeout_s
        self.name = name
        self.fidelity = Fidelity.HIGH

    def annotate_batch(self, samples: Sequence[Sample], ctx: AnnotationContext) -> BatchResult:
        items = []
        for sample in samples:  # caller order = descending uncertainty
            score = (ctx.uncertainty or {}).get(sample.id, 0.0)
            examples = ctx.retrieve(sample) if ctx.retrieve is not None else []
            context = tuple((e.sample.text, e.label) for e in examples)
            items.append(PendingItem(sample.id, sample.text, score, ctx.round, context))
        self.queue.offer(items)
        done = self.queue.wait_done([s.id for s in samples], self.timeout_s)
        annotations, failures = [], []
        for sample in samples:
            if sample.id in done:
                label, who = done[sample.id]
                annotations.append(
                    Annotation(sample.id, label, self.fidelity, f"{self.name}:{who}", ctx.round)
                )
            else:
                failures.append(AnnotationFailure(sample.id, "pending at timeout"))
        return BatchResult(tuple(annotations), tuple(failures))
