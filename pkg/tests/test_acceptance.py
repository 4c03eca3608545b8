"""The acceptance gate. Each test certifies one numbered criterion and the
conftest hook prints a one-line PASS/FAIL verdict per criterion after the
run. Criteria 1-6 pin formulas and selection logic against independent
straight-line references; 7-9 are directional benchmark reproductions on
the synthetic task; 10 fuzzes the loop invariants.

Every test measures its own wall time and asserts the criterion's runtime
ceiling, so a regression that makes the suite crawl fails loudly.
"""

from __future__ import annotations

import math
import shutil
import time

import numpy as np
import pytest

from labelloop.annotate import AnnotationFailure, BatchResult, NoisyAnnotator, NoisyProfile
from labelloop.budget import BudgetConfig, cumulative, human_schedule, llm_schedule
from labelloop.core import (
    AnnotatedSet,
    Annotation,
    DataPool,
    Fidelity,
    LabelSet,
    Sample,
    commit_annotations,
)
from labelloop.embed import EmbeddingStore, HashingEncoder, knn, retrieve_prompt_examples
from labelloop.learner import LearnerHyper, ReferenceLearner, softmax
from labelloop.orchestrator import Engine, RunConfig
from labelloop.query import (
    StrategyKind,
    UncertaintyBasis,
    eeq_select,
    least_confidence,
    mean_logprob_uncertainty,
)
from labelloop.seeding import derive_rng
from labelloop.synth import synth_task

from reference import numeric_gradient, ref_cosine_order, ref_eeq


# -- criterion 1: schedule golden values -------------------------------------


@pytest.mark.criterion(1, "budget schedule golden values")
def test_schedule_golden_values() -> None:
    t0 = time.perf_counter()
    human = human_schedule(200, 5)
    llm = llm_schedule(800, 5)
    assert human == [100, 50, 25, 13, 12]
    assert llm == [160, 160, 160, 160, 160]
    assert cumulative(human, llm) == [260, 470, 655, 828, 1000]
    assert time.perf_counter() - t0 < 1.0


# -- criterion 2: schedule properties ----------------------------------------


@pytest.mark.criterion(2, "schedule properties on 1000 random budgets")
def test_schedule_properties_hold_on_random_budgets() -> None:
    t0 = time.perf_counter()
    rng = np.random.default_rng(20_2)
    for _ in range(1000):
        budget = int(rng.integers(0, 10_001))
        rounds = int(rng.integers(1, 13))
        human = human_schedule(budget, rounds)
        llm = llm_schedule(budget, rounds)
        for sched in (human, llm):
            assert len(sched) == rounds
            assert sum(sched) == budget
            assert min(sched) >= 0
        # non-increasing up to the residual-carrying last round
        for i in range(rounds - 2):
            assert human[i] >= human[i + 1]
    assert time.perf_counter() - t0 < 5.0


# -- criterion 3: two-stage selection vs straight-line reference -------------


def _selection_instance(seed: int):
    rng = derive_rng(seed, "acceptance-eeq")
    n = int(rng.integers(8, 51))
    dim = int(rng.integers(2, 9))
    n_classes = int(rng.integers(2, 5))
    labelset = LabelSet(tuple(f"c{i}" for i in range(n_classes)))
    store = EmbeddingStore(HashingEncoder(dim=dim))
    candidates = []
    warmstart = []
    for i in range(n):
        sid = f"s{i:03d}"
        store.put(sid, rng.standard_normal(dim))
        candidates.append(Sample(sid, ""))
        warmstart.append((sid, labelset.labels[int(rng.integers(n_classes))]))
    learner = ReferenceLearner(labelset, store, LearnerHyper(epochs=12, lr=0.4))
    learner.init_tune(warmstart[: max(2, n // 3)])
    h = int(rng.integers(1, 5))
    g = int(rng.integers(1, min(n - h, 9)))
    return store, learner, candidates, h, g


@pytest.mark.criterion(3, "two-stage selection matches the reference pipeline")
def test_eeq_selection_matches_reference_on_100_instances() -> None:
    t0 = time.perf_counter()
    for seed in range(100):
        store, learner, candidates, h, g = _selection_instance(seed)
        plan = eeq_select(candidates, learner, store, h, g, round=1, seed=seed)
        by_id = {s.id: s for s in candidates}
        vectors = {s.id: store.get(s.id) for s in candidates}
        ref_h, ref_g = ref_eeq(
            vectors, lambda sid: learner.predict(by_id[sid])[0], h, g, seed
        )
        assert list(plan.human_ids) == ref_h, f"instance {seed}: human split diverged"
        assert list(plan.llm_ids) == ref_g, f"instance {seed}: llm split diverged"
    assert time.perf_counter() - t0 < 30.0


# -- criterion 4: retrieval vs exhaustive cosine sort ------------------------


@pytest.mark.criterion(4, "nearest-neighbour retrieval matches exhaustive sort")
def test_retrieval_matches_exhaustive_cosine_on_1000_queries() -> None:
    t0 = time.perf_counter()
    rng = np.random.default_rng(20_4)
    queries_done = 0
    pool_round = 0
    while queries_done < 1000:
        pool_round += 1
        dim = int(rng.integers(3, 13))
        n = int(rng.integers(20, 1001))
        store = EmbeddingStore(HashingEncoder(dim=dim))
        samples = []
        for i in range(n):
            sid = f"p{i:04d}"
            vec = rng.standard_normal(dim)
            while float(np.linalg.norm(vec)) == 0.0:  # cosine needs nonzero
                vec = rng.standard_normal(dim)
            store.put(sid, vec)
            samples.append(Sample(sid, ""))
        pool = DataPool(samples)
        labelset = LabelSet(("yes", "no"))
        annotated = AnnotatedSet()
        human_n = int(rng.integers(6, n + 1))
        batch = [
            Annotation(s.id, labelset.labels[int(rng.integers(2))], Fidelity.HIGH, "t", 1)
            for s in samples[:human_n]
        ]
        commit_annotations(pool, annotated, batch, labelset)
        vectors = {s.id: store.get(s.id) for s in samples}
        human_vectors = {sid: vectors[sid] for sid in annotated.human_ids}

        for _ in range(min(50, 1000 - queries_done)):
            queries_done += 1
            query = rng.standard_normal(dim)
            while float(np.linalg.norm(query)) == 0.0:
                query = rng.standard_normal(dim)
            k = int(rng.integers(1, 21))
            got = knn(store, query, list(vectors), k)
            want = ref_cosine_order(vectors, query)[:k]
            assert [sid for sid, _ in got] == [sid for sid, _ in want]
            assert np.allclose([s for _, s in got], [s for _, s in want], atol=1e-12)

            # prompt retrieval: same sort restricted to the human-annotated set
            query_id = samples[int(rng.integers(n))].id
            shots = int(rng.integers(1, 6))
            examples = retrieve_prompt_examples(
                store, pool, query_id, annotated, neighbors=50, shots=shots
            )
            expected = ref_cosine_order(human_vectors, vectors[query_id])
            expected = expected[: min(shots, len(expected))]
            assert [e.sample.id for e in examples] == [sid for sid, _ in expected]
            for e in examples:
                assert e.label == annotated.annotations[e.sample.id].label
    assert time.perf_counter() - t0 < 30.0


# -- criterion 5: uncertainty formulas ---------------------------------------


@pytest.mark.criterion(5, "uncertainty formulas match hand values, shift-invariant")
def test_uncertainty_hand_values_and_shift_invariance() -> None:
    assert abs(mean_logprob_uncertainty([-0.1, -0.3]) - 0.2) < 1e-12
    assert abs(mean_logprob_uncertainty([0.0]) - 0.0) < 1e-12
    assert abs(mean_logprob_uncertainty([-1.0, -2.0, -3.0]) - 2.0) < 1e-12

    assert abs(least_confidence([1.0, 0.0, 0.0]) - 0.0) < 1e-12
    assert abs(least_confidence([0.25, 0.25, 0.25, 0.25]) - 0.75) < 1e-12
    assert abs(least_confidence([0.5, 0.3, 0.2]) - 0.5) < 1e-12

    rng = np.random.default_rng(20_5)
    for _ in range(100):
        m = int(rng.integers(2, 9))
        # shifting every candidate's token logprobs by one constant moves all
        # scores equally: the most-uncertain candidate must not change
        lists = [(-rng.random(int(rng.integers(1, 6)))).tolist() for _ in range(m)]
        shift = -float(rng.random())
        base_scores = [mean_logprob_uncertainty(lp) for lp in lists]
        shifted_scores = [
            mean_logprob_uncertainty([x + shift for x in lp]) for lp in lists
        ]
        assert int(np.argmax(base_scores)) == int(np.argmax(shifted_scores))

        # a constant added to logits cancels in softmax, so least-confidence
        # scores are identical
        logits = rng.standard_normal((m, int(rng.integers(2, 6))))
        c = float(rng.standard_normal())
        for row in logits:
            a = least_confidence(softmax(row))
            b = least_confidence(softmax(row + c))
            assert abs(a - b) < 1e-12


# -- criterion 6: learner gradient vs finite differences ---------------------


def _learner_instance(seed: int):
    rng = derive_rng(seed, "acceptance-grad")
    dim = int(rng.integers(2, 6))
    n_classes = int(rng.integers(2, 5))
    labelset = LabelSet(tuple(f"c{i}" for i in range(n_classes)))
    store = EmbeddingStore(HashingEncoder(dim=dim))
    ids = []
    for i in range(int(rng.integers(4, 10))):
        sid = f"g{i:02d}"
        store.put(sid, rng.standard_normal(dim))
        ids.append(sid)
    def batch(size):
        return [
            (ids[int(rng.integers(len(ids)))], labelset.labels[int(rng.integers(n_classes))])
            for _ in range(size)
        ]
    high = batch(int(rng.integers(1, 5)))
    low = batch(int(rng.integers(0, 7)))  # low side may be empty
    learner = ReferenceLearner(labelset, store, LearnerHyper(l2=1e-3))
    weights = rng.standard_normal((n_classes, dim + 1)) * 0.5
    return learner, weights, high, low


@pytest.mark.criterion(6, "analytic gradient matches finite differences")
def test_gradient_matches_central_differences_on_50_instances() -> None:
    for seed in range(50):
        learner, weights, high, low = _learner_instance(seed)
        analytic = learner.gradient(weights, high, low)
        numeric = numeric_gradient(lambda w: learner.objective(w, high, low), weights)
        denom = max(float(np.linalg.norm(numeric)), 1e-12)
        rel = float(np.linalg.norm(analytic - numeric)) / denom
        assert rel < 1e-4, f"instance {seed}: relative error {rel}"


@pytest.mark.criterion(6, "analytic gradient matches finite differences")
def test_objective_is_exactly_invariant_under_duplication() -> None:
    # each subset enters as its own mean, so duplicating a subset's samples is
    # a no-op, bit for bit (doubling scales the exact sum and the divisor by
    # the same power of two, which floating point rounds identically)
    for seed in range(20):
        learner, weights, high, low = _learner_instance(seed)
        base = learner.objective(weights, high, low)
        assert learner.objective(weights, high * 2, low) == base
        assert learner.objective(weights, high * 4, low) == base
        if low:
            assert learner.objective(weights, high, low * 2) == base
            assert learner.objective(weights, high * 2, low * 2) == base


# -- criterion 10: loop invariants under fuzzing ------------------------------


class _FlakyWrapper:
    """Fails the first `k` samples of configured rounds, passes the rest on."""

    def __init__(self, inner, fail_by_round: dict[int, int]) -> None:
        self.inner = inner
        self.fail_by_round = fail_by_round
        self.name = f"flaky-{inner.name}"
        self.fidelity = inner.fidelity

    def annotate_batch(self, samples, ctx) -> BatchResult:
        k = self.fail_by_round.get(ctx.round, 0)
        result = self.inner.annotate_batch(list(samples[k:]), ctx)
        failures = tuple(AnnotationFailure(s.id, "injected outage") for s in samples[:k])
        return BatchResult(result.annotations, failures + result.failures)


def _fuzz_config(rng, run_dir=None) -> RunConfig:
    rounds = int(rng.integers(1, 5))
    human = int(rng.integers(0, 13))
    llm = int(rng.integers(0, 25))
    if human + llm == 0:
        human = 1
    warmstart = int(rng.integers(2, 7))
    strategy = [
        StrategyKind.EEQ,
        StrategyKind.RANDOM,
        StrategyKind.LEAST_CONFIDENCE,
        StrategyKind.KMEANS,
    ][int(rng.integers(4))]
    return RunConfig(
        budget=BudgetConfig(
            total=human + llm, human=human, llm=llm, rounds=rounds, warmstart=warmstart
        ),
        seed=int(rng.integers(100_000)),
        strategy=strategy,
        low_accuracy=float(rng.uniform(0.6, 1.0)),
        learner_epochs=int(rng.integers(3, 9)),
        learner_lr=0.3,
        tune_on_cumulative=bool(rng.integers(2)),
        run_dir=str(run_dir) if run_dir else None,
    )


def _inject_failures(engine: Engine, rng, rounds: int) -> None:
    if rounds >= 1 and rng.random() < 0.5:
        fails = {
            int(r): int(rng.integers(1, 4))
            for r in rng.choice(np.arange(1, rounds + 1), size=min(2, rounds), replace=False)
        }
        engine.low = _FlakyWrapper(engine.low, fails)
    if rounds >= 1 and rng.random() < 0.25:
        rnd = int(rng.integers(1, rounds + 1))
        engine.high = _FlakyWrapper(engine.high, {rnd: 1})


def _check_run_invariants(engine: Engine) -> None:
    engine.ledger.check()
    ledger = engine.ledger
    budget = engine.config.budget
    assert ledger.spent_human <= budget.human
    assert ledger.spent_human + ledger.spent_llm <= budget.total

    # conservation: every committed annotation is accounted to warmstart or a
    # round, and the pool partitions into annotated + unannotated exactly
    per_round = sum(r.human_done + r.llm_done for r in engine.rounds)
    warmstart_done = len(engine.annotated.by_round(0))
    assert len(engine.annotated) == warmstart_done + per_round
    annotated_ids = set(engine.annotated.annotations)
    unannotated_ids = set(engine.pool.unannotated_ids)
    assert not (annotated_ids & unannotated_ids)
    assert len(annotated_ids) + len(unannotated_ids) == len(engine.pool)

    # ordering: within each round every human commit precedes every llm commit,
    # and rounds commit in order
    last_seq = -1
    for rnd in range(len(engine.rounds) + 1):
        anns = engine.annotated.by_round(rnd)
        if not anns:
            continue
        assert anns[0].sequence > last_seq
        last_seq = anns[-1].sequence
        high_seqs = [a.sequence for a in anns if a.fidelity is Fidelity.HIGH]
        low_seqs = [a.sequence for a in anns if a.fidelity is Fidelity.LOW]
        if high_seqs and low_seqs:
            assert max(high_seqs) < min(low_seqs)


@pytest.mark.criterion(10, "loop invariants hold under 200 fuzzed runs")
def test_invariants_hold_under_fuzzed_runs(tmp_path) -> None:
    t0 = time.perf_counter()
    for i in range(200):
        rng = np.random.default_rng(10_000 + i)
        with_dir = i % 10 == 0
        run_dir = tmp_path / f"run{i:03d}" if with_dir else None
        task = synth_task(
            n_classes=int(rng.integers(2, 4)),
            n_samples=int(rng.integers(60, 141)),
            separation=float(rng.uniform(0.8, 1.3)),
            noise=0.0,
            seed=i,
        )
        config = _fuzz_config(rng, run_dir)
        engine = Engine(config, pool=task.pool, labelset=task.labelset)
        _inject_failures(engine, rng, config.budget.rounds)
        report = engine.run()
        _check_run_invariants(engine)
        assert report["phase"] == "done"

        if with_dir:
            _check_resume_replays_bit_identically(engine, run_dir, tmp_path / f"re{i:03d}")
    assert time.perf_counter() - t0 < 300.0


def _check_resume_replays_bit_identically(engine: Engine, run_dir, copy_dir) -> None:
    rounds_ran = len(engine.rounds)
    final = (run_dir / "checkpoints" / f"round-{rounds_ran}").read_bytes()
    report = (run_dir / "report").read_bytes()
    log = (run_dir / "annotations").read_bytes()
    if rounds_ran < 1:
        return
    resume_from = rounds_ran // 2  # includes round-0 (post-warmstart) starts

    shutil.copytree(run_dir, copy_dir)
    for rnd in range(resume_from + 1, rounds_ran + 1):
        (copy_dir / "checkpoints" / f"round-{rnd}").unlink()
    (copy_dir / "report").unlink()

    resumed = Engine.resume(copy_dir / "checkpoints" / f"round-{resume_from}")
    if isinstance(engine.low, _FlakyWrapper):
        resumed.low = _FlakyWrapper(resumed.low, engine.low.fail_by_round)
    if isinstance(engine.high, _FlakyWrapper):
        resumed.high = _FlakyWrapper(resumed.high, engine.high.fail_by_round)
    resumed.run()
    assert (copy_dir / "checkpoints" / f"round-{rounds_ran}").read_bytes() == final
    assert (copy_dir / "report").read_bytes() == report
    assert (copy_dir / "annotations").read_bytes() == log
