"""Reference learner: objective/gradient correctness, tuning, snapshots."""

import numpy as np
import pytest

from labelloop.core import LabelSet, Sample
from labelloop.embed import EmbeddingStore, HashingEncoder
from labelloop.learner import (
    LearnerError,
    LearnerHyper,
    LearnerSnapshot,
    ReferenceLearner,
    load_snapshot,
    save_snapshot,
    softmax,
)
from labelloop.seeding import derive_rng

from reference import numeric_gradient


def make_learner(n=12, dim=5, n_classes=3, seed=0, hyper=None):
    rng = derive_rng(seed, "learner-test")
    labelset = LabelSet(tuple(f"c{i}" for i in range(n_classes)))
    store = EmbeddingStore(HashingEncoder(dim=dim))
    batch = []
    for i in range(n):
        sid = f"s{i:03d}"
        store.put(sid, rng.standard_normal(dim))
        batch.append((sid, labelset.labels[int(rng.integers(n_classes))]))
    learner = ReferenceLearner(labelset, store, hyper or LearnerHyper())
    return learner, batch


def test_softmax_sums_to_one_and_is_shift_invariant():
    scores = np.array([1.0, 2.0, 3.0])
    p = softmax(scores)
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(softmax(scores + 500.0), p)


def test_softmax_survives_large_scores():
    p = softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0)


def test_gradient_matches_finite_differences():
    learner, batch = make_learner(n=10)
    high, low = batch[:4], batch[4:]
    rng = derive_rng(1, "grad-point")
    weights = rng.standard_normal(learner.weights.shape) * 0.5
    analytic = learner.gradient(weights, high, low)
    numeric = numeric_gradient(lambda w: learner.objective(w, high, low), weights)
    denom = max(np.abs(numeric).max(), 1e-8)
    assert np.abs(analytic - numeric).max() / denom < 1e-5


def test_objective_sums_subset_means():
    # one subset twice the size of the other must not dominate: each term is a mean
    learner, batch = make_learner(n=9, seed=3)
    high, low = batch[:3], batch[3:]
    both = learner.objective(learner.weights, high, low)
    only_high = learner.objective(learner.weights, high, [])
    only_low = learner.objective(learner.weights, [], low)
    l2_term = 0.0  # zero weights: no penalty
    assert both == pytest.approx(only_high + only_low - l2_term, abs=1e-12)


def test_objective_invariant_under_duplication():
    learner, batch = make_learner(n=8, seed=5)
    high, low = batch[:3], batch[3:]
    rng = derive_rng(2, "dup-point")
    weights = rng.standard_normal(learner.weights.shape)
    base = learner.objective(weights, high, low)
    doubled = learner.objective(weights, high * 2, low)
    assert doubled == base  # exact, not approximate


def test_objective_rejects_unknown_label():
    learner, batch = make_learner()
    with pytest.raises(LearnerError, match="label set"):
        learner.objective(learner.weights, [(batch[0][0], "mystery")], [])


def test_gradient_composes_subset_means():
    # one human ex + three llm ex: grad = grad(h) + mean of the three grads
    learner, batch = make_learner(n=4, seed=13)
    rng = derive_rng(3, "compose-point")
    weights = rng.standard_normal(learner.weights.shape)
    hyper_l2 = learner.hyper.l2
    full = learner.gradient(weights, batch[:1], batch[1:])
    part_h = learner.gradient(weights, batch[:1], []) - hyper_l2 * weights
    parts_g = [learner.gradient(weights, [], [b]) - hyper_l2 * weights for b in batch[1:]]
    recomposed = part_h + sum(parts_g) / 3 + hyper_l2 * weights
    assert np.allclose(full, recomposed, atol=1e-12)


def test_zero_weights_predict_uniform():
    learner, batch = make_learner(n_classes=4)
    dist, _ = learner.predict(Sample(batch[0][0], ""))
    assert np.allclose(dist, 0.25)


def test_training_loss_is_monotone():
    learner, batch = make_learner(n=15, seed=17, hyper=LearnerHyper(lr=0.05, epochs=1))
    high, low = batch[:6], batch[6:]
    losses = [learner.objective(learner.weights, high, low)]
    for _ in range(40):
        learner.round_tune(high, low, 1)
        losses.append(learner.objective(learner.weights, high, low))
    for before, after in zip(losses, losses[1:]):
        assert after <= before + 1e-9


def test_zero_epochs_is_identity():
    learner, batch = make_learner(hyper=LearnerHyper(epochs=0))
    before = learner.weights.copy()
    learner.init_tune(batch)
    assert np.array_equal(learner.weights, before)


def test_identical_trainings_give_identical_snapshots():
    a, batch_a = make_learner(seed=21, hyper=LearnerHyper(epochs=20))
    b, batch_b = make_learner(seed=21, hyper=LearnerHyper(epochs=20))
    snap_a = a.init_tune(batch_a)
    snap_b = b.init_tune(batch_b)
    assert np.array_equal(snap_a.weights, snap_b.weights)


def test_training_fits_separable_data():
    labelset = LabelSet(("left", "right"))
    store = EmbeddingStore(HashingEncoder(dim=2))
    batch = []
    rng = derive_rng(7, "separable")
    for i in range(20):
        side = i % 2
        vec = np.array([1.0, 0.0]) if side == 0 else np.array([0.0, 1.0])
        sid = f"s{i:02d}"
        store.put(sid, vec + 0.05 * rng.standard_normal(2))
        batch.append((sid, labelset.labels[side]))
    learner = ReferenceLearner(labelset, store, LearnerHyper(lr=0.5, epochs=200))
    learner.init_tune(batch)
    for sid, label in batch:
        assert learner.predict_label(Sample(sid, "")) == label


def test_init_tune_requires_data():
    learner, _ = make_learner()
    with pytest.raises(LearnerError, match="non-empty"):
        learner.init_tune([])
    with pytest.raises(LearnerError, match="non-empty"):
        learner.round_tune([], [], 1)


def test_predict_returns_distribution_and_logprob():
    learner, batch = make_learner()
    dist, logprobs = learner.predict(Sample(batch[0][0], ""))
    assert dist.shape == (3,)
    assert dist.sum() == pytest.approx(1.0)
    assert len(logprobs) == 1
    assert logprobs[0] == pytest.approx(float(np.log(dist.max())), abs=1e-9)


def test_round_tune_warm_starts_from_current_weights():
    learner, batch = make_learner(n=10, seed=11, hyper=LearnerHyper(epochs=5))
    learner.init_tune(batch[:5])
    after_init = learner.weights.copy()
    learner.round_tune(batch[5:8], batch[8:], 1)
    assert not np.array_equal(learner.weights, after_init)
    assert learner.round == 1


def test_snapshot_restore_round_trips():
    learner, batch = make_learner(n=10, hyper=LearnerHyper(epochs=10))
    snap0 = learner.init_tune(batch[:5])
    w0 = learner.weights.copy()
    learner.round_tune(batch[5:], [], 1)
    assert not np.array_equal(learner.weights, w0)
    learner.restore(snap0.id)
    assert np.array_equal(learner.weights, w0)
    assert learner.round == 0
    with pytest.raises(LearnerError, match="unknown snapshot"):
        learner.restore("nope")


def test_snapshot_file_round_trip(tmp_path):
    learner, batch = make_learner(hyper=LearnerHyper(epochs=3))
    snap = learner.init_tune(batch)
    path = tmp_path / "snap.json"
    save_snapshot(snap, path)
    loaded = load_snapshot(path)
    assert loaded.id == snap.id
    assert loaded.round == snap.round
    assert np.array_equal(loaded.weights, snap.weights)
    assert loaded.hyper == snap.hyper


def test_load_snapshot_rejects_wrong_shape():
    learner, _ = make_learner(dim=5)
    other, batch = make_learner(dim=7, seed=9, hyper=LearnerHyper(epochs=1))
    snap = other.init_tune(batch)
    with pytest.raises(LearnerError, match="shape"):
        learner.load_snapshot(snap)


def test_snapshot_dict_version_check():
    learner, batch = make_learner(hyper=LearnerHyper(epochs=1))
    data = learner.init_tune(batch).to_dict()
    data["version"] = 99
    with pytest.raises(LearnerError, match="version"):
        LearnerSnapshot.from_dict(data)
