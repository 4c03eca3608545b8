"""Encoders, the embedding store, exact kNN, and prompt retrieval."""

import numpy as np
import pytest

from labelloop.core import AnnotatedSet, Annotation, DataPool, Fidelity, Sample, commit_annotations
from labelloop.embed import (
    EmbeddingError,
    EmbeddingStore,
    HashingEncoder,
    NoContextError,
    cosine_similarity,
    knn,
    retrieve_prompt_examples,
)
from labelloop.seeding import derive_rng

from reference import ref_cosine_order


def test_hashing_encoder_is_deterministic():
    enc = HashingEncoder(dim=32)
    a = enc.encode("the quick brown fox")
    b = HashingEncoder(dim=32).encode("the quick brown fox")
    assert np.array_equal(a, b)
    assert a.shape == (32,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_hashing_encoder_empty_text_is_zero():
    assert np.array_equal(HashingEncoder(dim=8).encode("..."), np.zeros(8))


def test_hashing_encoder_case_insensitive():
    enc = HashingEncoder(dim=32)
    assert np.array_equal(enc.encode("Hello World"), enc.encode("hello world"))


def seeded_store(n=20, dim=8, seed=0):
    rng = derive_rng(seed, "embed-test")
    store = EmbeddingStore(HashingEncoder(dim=dim))
    for i in range(n):
        store.put(f"s{i:03d}", rng.standard_normal(dim))
    return store


def test_store_rejects_wrong_shape_and_nonfinite():
    store = EmbeddingStore(HashingEncoder(dim=4))
    with pytest.raises(EmbeddingError, match="shape"):
        store.put("x", np.ones(5))
    with pytest.raises(EmbeddingError, match="non-finite"):
        store.put("x", np.array([1.0, np.nan, 0.0, 0.0]))


def test_store_get_unknown_id():
    store = EmbeddingStore(HashingEncoder(dim=4))
    with pytest.raises(EmbeddingError, match="no embedding"):
        store.get("missing")


def test_store_sidecar_cache_round_trips(tmp_path):
    cache = tmp_path / "vectors.jsonl"
    enc = HashingEncoder(dim=16)
    store = EmbeddingStore(enc, cache_path=cache)
    store.ensure([Sample("a", "alpha beta"), Sample("b", "gamma")])
    reloaded = EmbeddingStore(HashingEncoder(dim=16), cache_path=cache)
    assert set(reloaded.vectors) == {"a", "b"}
    assert np.array_equal(reloaded.get("a"), store.get("a"))


def test_store_cache_ignores_other_encoders(tmp_path):
    cache = tmp_path / "vectors.jsonl"
    store = EmbeddingStore(HashingEncoder(dim=16), cache_path=cache)
    store.ensure([Sample("a", "alpha")])
    other = EmbeddingStore(HashingEncoder(dim=8), cache_path=cache)
    assert "a" not in other.vectors


def test_cosine_similarity_basics():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)
    with pytest.raises(EmbeddingError, match="mismatch"):
        cosine_similarity(np.ones(2), np.ones(3))
    with pytest.raises(EmbeddingError, match="zero"):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_knn_matches_exhaustive_reference():
    store = seeded_store(n=50)
    rng = derive_rng(1, "knn-query")
    for trial in range(20):
        q = rng.standard_normal(8)
        expected = ref_cosine_order(store.vectors, q)[:7]
        got = knn(store, q, list(store.vectors), k=7)
        assert [i for i, _ in got] == [i for i, _ in expected]


def test_knn_k_larger_than_pool_returns_everything():
    store = seeded_store(n=5)
    got = knn(store, np.ones(8), list(store.vectors), k=50)
    assert len(got) == 5


def test_knn_breaks_ties_by_ascending_id():
    store = EmbeddingStore(HashingEncoder(dim=2))
    # identical vectors: similarity ties across the board
    for sid in ("b", "a", "c"):
        store.put(sid, np.array([1.0, 0.0]))
    got = knn(store, np.array([1.0, 0.0]), ["b", "a", "c"], k=3)
    assert [i for i, _ in got] == ["a", "b", "c"]


def test_knn_rejects_bad_inputs():
    store = seeded_store(n=3)
    with pytest.raises(EmbeddingError, match="non-empty"):
        knn(store, np.ones(8), [], k=1)
    with pytest.raises(EmbeddingError, match="k must be"):
        knn(store, np.ones(8), ["s000"], k=0)


def retrieval_fixture():
    samples = [Sample(f"s{i}", f"text {i}") for i in range(10)]
    pool = DataPool(samples, {s.id: "a" for s in samples})
    store = EmbeddingStore(HashingEncoder(dim=6))
    rng = derive_rng(3, "retrieval-test")
    for s in samples:
        store.put(s.id, rng.standard_normal(6))
    annotated = AnnotatedSet()
    human = [Annotation(f"s{i}", "a" if i % 2 else "b", Fidelity.HIGH, "oracle", 1) for i in range(6)]
    commit_annotations(pool, annotated, human)
    return pool, store, annotated


def test_retrieve_prompt_examples_orders_by_similarity():
    pool, store, annotated = retrieval_fixture()
    got = retrieve_prompt_examples(store, pool, "s9", annotated, neighbors=50, shots=3)
    assert len(got) == 3
    sims = [e.similarity for e in got]
    assert sims == sorted(sims, reverse=True)
    expected = ref_cosine_order(
        {i: store.get(i) for i in annotated.human_ids}, store.get("s9")
    )[:3]
    assert [e.sample.id for e in got] == [i for i, _ in expected]
    # labels come from the human annotations, not gold
    assert all(e.label == annotated.annotations[e.sample.id].label for e in got)


def test_retrieve_prompt_examples_narrows_through_neighbors():
    pool, store, annotated = retrieval_fixture()
    wide = retrieve_prompt_examples(store, pool, "s9", annotated, neighbors=50, shots=4)
    narrow = retrieve_prompt_examples(store, pool, "s9", annotated, neighbors=4, shots=4)
    assert [e.sample.id for e in wide] == [e.sample.id for e in narrow]


def test_retrieve_prompt_examples_requires_human_context():
    pool, store, _ = retrieval_fixture()
    with pytest.raises(NoContextError):
        retrieve_prompt_examples(store, pool, "s9", AnnotatedSet())
