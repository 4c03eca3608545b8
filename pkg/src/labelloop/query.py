"""Acquisition strategies.

The two-stage selector (here `eeq_select`) first clusters the candidate
embeddings with k = h + g and keeps one representative per cluster
(exploration), then ranks those representatives by model uncertainty and
hands the top h to the high-fidelity annotator, the remaining g to the
low-fidelity one (exploitation). The baselines share the same plumbing so a
run config can swap strategies with one key.

Every strategy is deterministic given (candidates, learner state, seed):
candidates are canonicalized to ascending-id order before any arithmetic,
and all ranking ties break by ascending id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import LoopError, Sample
from .embed import EmbeddingStore
from .learner import Learner
from .seeding import derive_rng

KMEANS_MAX_ITERS = 100


class QueryError(LoopError):
    pass


class UncertaintyBasis(Enum):
    MEAN_TOKEN_LOGPROB = "mean_token_logprob"
    LEAST_CONFIDENCE = "least_confidence"
    ENTROPY = "entropy"
    MARGIN = "margin"


class StrategyKind(Enum):
    RANDOM = "random"
    ENTROPY = "entropy"
    LEAST_CONFIDENCE = "least_confidence"
    BREAKING_TIES = "breaking_ties"
    KMEANS = "kmeans"
    DIVERSITY = "diversity"
    HYBRID = "hybrid"
    EEQ = "eeq"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        norm = text.strip().lower().replace("-", "_")
        for kind in cls:
            if norm == kind.value or norm == kind.name.lower():
                return kind
        valid = ", ".join(k.value for k in cls)
        raise QueryError(f"unknown strategy {text!r} (expected one of: {valid})")


@dataclass(frozen=True, slots=True)
class UncertaintyScore:
    sample_id: str
    score: float  # higher = more uncertain
    basis: UncertaintyBasis

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise QueryError(f"non-finite uncertainty for {self.sample_id!r}")


@dataclass(frozen=True)
class QueryPlan:
    round: int
    human_ids: tuple[str, ...]  # descending uncertainty
    llm_ids: tuple[str, ...]
    k_clusters: int
    strategy: StrategyKind
    seed: int
    scores: tuple[UncertaintyScore, ...] = ()

    def __post_init__(self) -> None:
        overlap = set(self.human_ids) & set(self.llm_ids)
        if overlap:
            raise QueryError(f"plan assigns {sorted(overlap)!r} to both fidelities")

    @property
    def selected_ids(self) -> tuple[str, ...]:
        return self.human_ids + self.llm_ids

    def score_of(self, sample_id: str) -> float | None:
        for entry in self.scores:
            if entry.sample_id == sample_id:
                return entry.score
        return None


# -- uncertainty formulas ------------------------------------------------


def mean_logprob_uncertainty(token_logprobs: Sequence[float]) -> float:
    """Negated arithmetic mean of token log-probabilities."""
    if len(token_logprobs) == 0:
        raise QueryError("mean_logprob_uncertainty needs at least one token")
    for lp in token_logprobs:
        if not math.isfinite(lp) or lp > 0:
            raise QueryError(f"token logprob {lp!r} outside (-inf, 0]")
    return -sum(token_logprobs) / len(token_logprobs)


def _check_distribution(dist: Sequence[float]) -> np.ndarray:
    arr = np.asarray(dist, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise QueryError("distribution must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise QueryError("distribution entries must be finite and non-negative")
    if abs(float(arr.sum()) - 1.0) > 1e-9:
        raise QueryError(f"distribution sums to {float(arr.sum())}, not 1")
    return arr


def least_confidence(dist: Sequence[float]) -> float:
    arr = _check_distribution(dist)
    return 1.0 - float(arr.max())


def entropy_uncertainty(dist: Sequence[float]) -> float:
    arr = _check_distribution(dist)
    nz = arr[arr > 0]
    return float(-(nz * np.log(nz)).sum())


def margin_uncertainty(dist: Sequence[float]) -> float:
    """1 - (p_top - p_second): small margins score as most uncertain."""
    arr = _check_distribution(dist)
    if arr.size < 2:
        return 0.0
    top2 = np.sort(arr)[-2:]
    return 1.0 - float(top2[1] - top2[0])


def score_candidates(
    learner: Learner, samples: Sequence[Sample], basis: UncertaintyBasis
) -> list[UncertaintyScore]:
    scores = []
    for sample in samples:
        dist, token_logprobs = learner.predict(sample)
        if basis is UncertaintyBasis.MEAN_TOKEN_LOGPROB:
            value = mean_logprob_uncertainty(token_logprobs)
        elif basis is UncertaintyBasis.LEAST_CONFIDENCE:
            value = least_confidence(dist)
        elif basis is UncertaintyBasis.ENTROPY:
            value = entropy_uncertainty(dist)
        else:
            value = margin_uncertainty(dist)
        scores.append(UncertaintyScore(sample.id, value, basis))
    return scores


def rank_descending(scores: Sequence[UncertaintyScore]) -> list[UncertaintyScore]:
    return sorted(scores, key=lambda s: (-s.score, s.sample_id))


# -- diversity machinery -------------------------------------------------


def _canonical_matrix(vectors: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    ids = sorted(vectors)
    mat = np.stack([np.asarray(vectors[i], dtype=np.float64) for i in ids])
    return ids, mat


def sq_distances(mat: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances via one matmul, clamped at zero."""
    gram = mat @ centers.T
    d2 = (mat * mat).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :] - 2.0 * gram
    return np.maximum(d2, 0.0)


def _farthest_point_order(mat: np.ndarray, first: int, count: int) -> list[int]:
    """Greedy max-min traversal; ties resolve to the lowest index."""
    chosen = [first]
    mindist = ((mat - mat[first]) ** 2).sum(axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(mindist))  # argmax takes the first occurrence
        chosen.append(nxt)
        mindist = np.minimum(mindist, ((mat - mat[nxt]) ** 2).sum(axis=1))
    return chosen


def _lloyd(mat: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, k = mat.shape[0], centers.shape[0]
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITERS):
        d2 = sq_distances(mat, centers)
        new_assign = d2.argmin(axis=1)
        for c in range(k):
            mask = new_assign == c
            if not mask.any():
                # re-seed the empty cluster from the worst-served point
                worst = int(np.argmax(d2[np.arange(n), new_assign]))
                centers[c] = mat[worst]
                new_assign[worst] = c
                mask = new_assign == c
            centers[c] = mat[mask].mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers


def kmeans_select(
    vectors: Mapping[str, np.ndarray], k: int, seed: int, restarts: int = 1
) -> list[str]:
    """One representative id per cluster: the member nearest its centroid.

    Initialization is greedy farthest-point from a seeded first center;
    `restarts` > 1 rotates the first center and keeps the lowest-inertia
    clustering (restarts = n enumerates every possible start).
    """
    ids, mat = _canonical_matrix(vectors)
    n = len(ids)
    if k < 1 or k > n:
        raise QueryError(f"k={k} outside [1, {n}]")
    if k == n:
        return list(ids)

    base = int(derive_rng(seed, "kmeans-init").integers(n))
    best: tuple[float, list[str]] | None = None
    for restart in range(max(1, restarts)):
        first = (base + restart) % n
        init = _farthest_point_order(mat, first, k)
        assign, centers = _lloyd(mat, mat[init].copy())
        d2 = sq_distances(mat, centers)
        inertia = float(d2[np.arange(n), assign].sum())
        reps = []
        for c in range(k):
            members = np.where(assign == c)[0]
            # first occurrence on ties = lowest index = ascending id
            reps.append(ids[int(members[np.argmin(d2[members, c])])])
        if best is None or inertia < best[0]:
            best = (inertia, sorted(reps))
    assert best is not None
    return best[1]


# -- strategies -----------------------------------------------------------


def _vectors_for(store: EmbeddingStore, candidates: Sequence[Sample]) -> dict[str, np.ndarray]:
    return {s.id: store.get(s.id) for s in candidates}


def eeq_select(
    candidates: Sequence[Sample],
    learner: Learner,
    store: EmbeddingStore,
    h: int,
    g: int,
    *,
    round: int,
    seed: int,
    basis: UncertaintyBasis = UncertaintyBasis.LEAST_CONFIDENCE,
    restarts: int = 1,
) -> QueryPlan:
    """Two-stage acquisition: diversity clustering, then uncertainty split."""
    k = h + g
    if len(candidates) < k:
        raise QueryError(f"need {k} candidates for k-means, have {len(candidates)}")
    if k == 0:
        return QueryPlan(round, (), (), 0, StrategyKind.EEQ, seed)
    by_id = {s.id: s for s in candidates}
    diverse = kmeans_select(_vectors_for(store, candidates), k, seed, restarts)
    ranked = rank_descending(score_candidates(learner, [by_id[i] for i in sorted(diverse)], basis))
    ordered = [s.sample_id for s in ranked]
    return QueryPlan(
        round=round,
        human_ids=tuple(ordered[:h]),
        llm_ids=tuple(ordered[h:]),
        k_clusters=k,
        strategy=StrategyKind.EEQ,
        seed=seed,
        scores=tuple(ranked),
    )


def _normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _hybrid_order(
    ids: list[str], mat: np.ndarray, uncertainty: np.ndarray, total: int, lam: float
) -> list[str]:
    norm_unc = _normalize(uncertainty)
    selected: list[int] = []
    remaining = list(range(len(ids)))
    mindist = np.full(len(ids), np.inf)
    while len(selected) < total:
        if selected:
            div = mindist[remaining]
            top = div.max()
            norm_div = div / top if top > 0 else np.zeros_like(div)
        else:
            norm_div = np.ones(len(remaining))  # nothing selected: all maximally diverse
        combined = lam * norm_unc[remaining] + (1.0 - lam) * norm_div
        pick = remaining[int(np.argmax(combined))]
        selected.append(pick)
        remaining.remove(pick)
        mindist = np.minimum(mindist, ((mat - mat[pick]) ** 2).sum(axis=1) ** 0.5)
    return [ids[i] for i in selected]


def baseline_select(
    kind: StrategyKind,
    candidates: Sequence[Sample],
    learner: Learner,
    store: EmbeddingStore,
    total: int,
    *,
    seed: int,
    hybrid_lambda: float = 0.5,
    basis: UncertaintyBasis = UncertaintyBasis.LEAST_CONFIDENCE,
) -> list[str]:
    """Ordered selection of `total` ids under one of the reference baselines."""
    if total > len(candidates):
        raise QueryError(f"cannot select {total} of {len(candidates)} candidates")
    if total < 0:
        raise QueryError(f"negative selection size {total}")
    if total == 0:
        return []
    ordered_candidates = sorted(candidates, key=lambda s: s.id)

    if kind is StrategyKind.RANDOM:
        rng = derive_rng(seed, "random-select")
        picks = rng.choice(len(ordered_candidates), size=total, replace=False)
        return [ordered_candidates[int(i)].id for i in picks]

    if kind is StrategyKind.KMEANS:
        return kmeans_select(_vectors_for(store, candidates), total, seed)

    if kind in (StrategyKind.DIVERSITY, StrategyKind.HYBRID):
        ids, mat = _canonical_matrix(_vectors_for(store, candidates))
        if kind is StrategyKind.DIVERSITY:
            centroid = mat.mean(axis=0)
            start = int(np.argmin(((mat - centroid) ** 2).sum(axis=1)))
            order = _farthest_point_order(mat, start, total)
            return [ids[i] for i in order]
        if not 0.0 <= hybrid_lambda <= 1.0:
            raise QueryError(f"hybrid lambda {hybrid_lambda} outside [0, 1]")
        by_id = {s.id: s for s in candidates}
        unc = np.array(
            [s.score for s in score_candidates(learner, [by_id[i] for i in ids], basis)]
        )
        return _hybrid_order(ids, mat, unc, total, hybrid_lambda)

    basis_for = {
        StrategyKind.ENTROPY: UncertaintyBasis.ENTROPY,
        StrategyKind.LEAST_CONFIDENCE: UncertaintyBasis.LEAST_CONFIDENCE,
        StrategyKind.BREAKING_TIES: UncertaintyBasis.MARGIN,
    }
    if kind not in basis_for:
        raise QueryError(f"{kind} is not a baseline strategy")
    ranked = rank_descending(score_candidates(learner, ordered_candidates, basis_for[kind]))
    return [s.sample_id for s in ranked[:total]]


def plan_queries(
    kind: StrategyKind,
    candidates: Sequence[Sample],
    learner: Learner,
    store: EmbeddingStore,
    h: int,
    g: int,
    *,
    round: int,
    seed: int,
    hybrid_lambda: float = 0.5,
    basis: UncertaintyBasis = UncertaintyBasis.LEAST_CONFIDENCE,
    restarts: int = 1,
) -> QueryPlan:
    """Produce the round's plan under any strategy.

    The two-stage selector splits by uncertainty itself; every baseline
    yields an ordered list whose first h ids go to the high-fidelity
    annotator so the budget split is applied uniformly.
    """
    if kind is StrategyKind.EEQ:
        return eeq_select(
            candidates, learner, store, h, g, round=round, seed=seed, basis=basis, restarts=restarts
        )
    ordered = baseline_select(
        kind, candidates, learner, store, h + g, seed=seed, hybrid_lambda=hybrid_lambda, basis=basis
    )
    by_id = {s.id: s for s in candidates}
    scores = score_candidates(learner, [by_id[i] for i in ordered], basis)
    return QueryPlan(
        round=round,
        human_ids=tuple(ordered[:h]),
        llm_ids=tuple(ordered[h:]),
        k_clusters=h + g,
        strategy=kind,
        seed=seed,
        scores=tuple(scores),
    )
