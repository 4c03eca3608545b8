"""Synthetic classification tasks for desk-scale benchmarking.

Samples are Gaussian clusters in the reference encoder's feature space,
rendered back into token strings so the whole pipeline (text in, embedding
out) runs unmodified. Cluster centers sit on the unit sphere in the
non-negative orthant at a controlled pairwise distance, so task difficulty
is a single knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataPool, GoldAccess, LabelSet, LoopError, Sample
from .embed import _bucket
from .seeding import derive_rng

COUNT_SCALE = 60  # token counts per sample before jitter; sets quantization error


class SynthError(LoopError):
    pass


@dataclass(frozen=True)
class SynthTask:
    pool: DataPool
    test_samples: tuple[Sample, ...]
    test_gold: dict[str, str]
    labelset: LabelSet
    access: GoldAccess  # capability for the simulated annotators


_token_cache: dict[int, list[str]] = {}


def bucket_tokens(dim: int) -> list[str]:
    """One token per hash bucket, found by scanning a deterministic stream."""
    if dim not in _token_cache:
        tokens: list[str | None] = [None] * dim
        missing = dim
        i = 0
        while missing:
            word = f"t{i}"
            b = _bucket(word, dim)
            if tokens[b] is None:
                tokens[b] = word
                missing -= 1
            i += 1
        _token_cache[dim] = [t for t in tokens if t is not None]
    return _token_cache[dim]


def _render_text(counts: np.ndarray, tokens: list[str]) -> str:
    words = []
    for b, c in enumerate(counts):
        words.extend([tokens[b]] * int(c))
    return " ".join(words)


def synth_task(
    n_classes: int,
    n_samples: int,
    separation: float,
    noise: float,
    seed: int,
    *,
    dim: int = 64,
    sigma: float = 0.12,
) -> SynthTask:
    """Token-string classification task with planted Gaussian clusters.

    `separation` is the pairwise Euclidean distance between unit-norm class
    centers (must be in (0, sqrt(2)]); `noise` is the exact fraction of gold
    labels flipped to a random wrong class. Class priors decay geometrically
    (each class half as common as the one before) and cluster width grows
    with class index, so the pool carries the redundancy profile of a real
    annotation corpus. Split is 80 percent pool, 20 percent held-out test.
    """
    if n_classes < 2:
        raise SynthError(f"need at least 2 classes, got {n_classes}")
    if n_classes + 1 > dim:
        raise SynthError(f"{n_classes} classes need {n_classes + 1} buckets, dim is {dim}")
    if not 0.0 < separation <= math.sqrt(2.0) + 1e-12:
        raise SynthError(f"separation {separation} outside (0, sqrt(2)]")
    if not 0.0 <= noise < 1.0:
        raise SynthError(f"noise {noise} outside [0, 1)")
    if n_samples < n_classes:
        raise SynthError(f"{n_samples} samples cannot cover {n_classes} classes")

    tokens = bucket_tokens(dim)
    labelset = LabelSet(tuple(f"class{c}" for c in range(n_classes)))

    # centers: shared direction e_0 tilted toward a private axis per class so
    # every pairwise distance is exactly `separation` and all coordinates stay
    # non-negative (counts cannot be negative)
    theta = math.asin(separation / math.sqrt(2.0))
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = math.cos(theta)
    for c in range(n_classes):
        centers[c, 1 + c] = math.sin(theta)

    # class priors decay geometrically and cluster width grows with class
    # index: the majority classes are dense blobs of near-duplicates while the
    # minorities are broad and carry most of the decision boundary. Real
    # annotation pools are redundant in exactly this way, which is what makes
    # the choice of queries matter at all.
    rng = derive_rng(seed, "synth")
    weights = 0.5 ** np.arange(n_classes)
    weights /= weights.sum()
    spreads = 0.55 + 0.9 * np.arange(n_classes) / max(1, n_classes - 1)
    classes = rng.choice(n_classes, size=n_samples, p=weights)
    classes[:n_classes] = np.arange(n_classes)  # every class is represented

    samples, gold = [], {}
    for i in range(n_samples):
        c = int(classes[i])
        point = centers[c] + sigma * spreads[c] * rng.standard_normal(dim)
        counts = np.maximum(0, np.rint(point * COUNT_SCALE)).astype(np.int64)
        if counts.sum() == 0:
            counts[1 + c] = 1  # degenerate draw, keep the sample on its axis
        sid = f"ex{i:05d}"
        samples.append(Sample(sid, _render_text(counts, tokens)))
        gold[sid] = labelset.labels[c]

    n_flip = round(noise * n_samples)
    if n_flip:
        flip_rng = derive_rng(seed, "synth-flip")
        for i in flip_rng.choice(n_samples, size=n_flip, replace=False):
            sid = samples[int(i)].id
            wrong = [lab for lab in labelset.labels if lab != gold[sid]]
            gold[sid] = wrong[int(flip_rng.integers(len(wrong)))]

    order = derive_rng(seed, "synth-split").permutation(n_samples)
    n_test = n_samples // 5
    test_idx = set(int(i) for i in order[:n_test])
    pool_samples = tuple(s for i, s in enumerate(samples) if i not in test_idx)
    test_samples = tuple(s for i, s in enumerate(samples) if i in test_idx)

    access = GoldAccess("synth")
    pool = DataPool(
        samples=pool_samples,
        gold={s.id: gold[s.id] for s in pool_samples},
    )
    return SynthTask(
        pool=pool,
        test_samples=test_samples,
        test_gold={s.id: gold[s.id] for s in test_samples},
        labelset=labelset,
        access=access,
    )
