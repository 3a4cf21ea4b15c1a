import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from mpmath import mp, mpf

from acqb.contrastive import (EPOCHS, IOTA_NEG, IOTA_POS, K_NEG, PARAM_NAMES, PER_MODEL, TAU_TEMP,
                              OfflineDataset, PairSelection, ProjectionHead, balanced_sample,
                              batch_loss, infonce_loss, load_head, save_head, select_pairs,
                              similarity_matrix, train_head, two_cluster_dataset, utility_similarity)
from acqb.errors import DomainError, SamplingWarning, TrainingError


def test_defaults():
    assert (IOTA_POS, IOTA_NEG, TAU_TEMP, K_NEG, PER_MODEL, EPOCHS) == (0.6, 0.3, 0.07, 64, 5, 10)


# sampling -----------------------------------------------------------------


def test_balanced_sample_two_groups():
    rng = np.random.default_rng(0)
    U = np.vstack([np.tile([0.9, 0.1], (50, 1)), np.tile([0.2, 0.8], (50, 1))])
    X = rng.normal(size=(100, 4))
    ds = balanced_sample(X, U, per_model=5, seed=1)
    assert len(ds) == 10
    best = np.argmax(ds.U, axis=1)
    assert (best == 0).sum() == 5 and (best == 1).sum() == 5


def test_balanced_sample_ties_and_small_groups():
    U = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]])
    with pytest.warns(SamplingWarning):
        ds = balanced_sample(np.eye(3), U, per_model=2, seed=0)
    # the tied items count toward server 0; server 1 has a single item
    assert len(ds) == 3
    np.testing.assert_array_equal(ds.X, np.eye(3))


def test_balanced_sample_deterministic():
    rng = np.random.default_rng(3)
    X, U = rng.normal(size=(60, 3)), rng.random((60, 4))
    a, b = balanced_sample(X, U, 3, seed=7), balanced_sample(X, U, 3, seed=7)
    np.testing.assert_array_equal(a.X, b.X)


# similarities ---------------------------------------------------------------


def test_similarity_examples():
    assert utility_similarity([1, 0], [0, 1]) == pytest.approx(-1.0)
    assert utility_similarity([0.3, 0.9, 0.1], [0.3, 0.9, 0.1]) == pytest.approx(1.0)
    assert utility_similarity([0.5, 0.5], [1, 0]) == 0.0
    mp.dps = 30
    a = [mpf(1) - mpf(1) / 3, -mpf(1) / 3, -mpf(1) / 3]
    b = [mpf("0.9") - mpf(1) / 3, mpf("0.1") - mpf(1) / 3, -mpf(1) / 3]
    oracle = sum(x * y for x, y in zip(a, b)) / (mp.sqrt(sum(x * x for x in a)) * mp.sqrt(sum(y * y for y in b)))
    assert utility_similarity([1, 0, 0], [0.9, 0.1, 0]) == pytest.approx(float(oracle), abs=1e-14)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_similarity_range(u, v):
    c = utility_similarity(u, v)
    assert -1 <= c <= 1


HAND_U = np.array([[1.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def test_select_pairs_hand_built():
    # c(0,1) ~ 0.995, c(0,2) = c(0,3) = c(2,3) = -0.5, c(1,2) ~ -0.585, c(1,3) ~ -0.41
    pairs = select_pairs(HAND_U)
    assert [(p.anchor, p.positive, p.negatives) for p in pairs] == [(0, 1, (2, 3)), (1, 0, (2, 3))]
    capped = select_pairs(HAND_U, K_neg=1)
    assert [(p.anchor, p.negatives) for p in capped] == [(0, (2,)), (1, (2,))]


def test_select_pairs_none_between_thresholds():
    U = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    # similarity -0.5... every pair below iota_pos: no positive for anybody
    assert select_pairs(U) == []
    assert select_pairs(HAND_U, iota_pos=0.999, iota_neg=-0.9) == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_pairs_threshold_replay(seed):
    rng = np.random.default_rng(seed)
    U = rng.random((25, 4))
    C, ok = similarity_matrix(U)
    for p in select_pairs(U, K_neg=5):
        assert ok[p.anchor]
        assert C[p.anchor, p.positive] > IOTA_POS
        assert all(C[p.anchor, j] < IOTA_NEG for j in p.negatives)
        others = [j for j in range(25) if j != p.anchor]
        assert C[p.anchor, p.positive] == max(C[p.anchor, j] for j in others if C[p.anchor, j] > IOTA_POS)
        neg_all = sorted((C[p.anchor, j], j) for j in others if C[p.anchor, j] < IOTA_NEG)
        assert sorted(C[p.anchor, list(p.negatives)]) == [c for c, _ in neg_all[:5]]


# loss -------------------------------------------------------------------


def test_infonce_ln2_symmetric():
    head = ProjectionHead.init(4, 8, 3, seed=0)
    rng = np.random.default_rng(1)
    x, other = rng.normal(size=(2, 4))
    loss, _ = infonce_loss(head, x, other, other[None], tau=1.0)
    assert abs(loss - math.log(2)) <= 1e-9


def _flat_params(head):
    return np.concatenate([getattr(head, k).ravel() for k in PARAM_NAMES])


def _set_flat(head, flat):
    out = head.copy()
    i = 0
    for k in PARAM_NAMES:
        a = getattr(out, k)
        setattr(out, k, flat[i:i + a.size].reshape(a.shape))
        i += a.size
    return out


@pytest.mark.parametrize("seed", range(10))
def test_infonce_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    head = ProjectionHead.init(5, 6, 3, seed=seed)
    x, xp = rng.normal(size=(2, 5))
    negs = rng.normal(size=(int(rng.integers(1, 5)), 5))
    tau = float(rng.uniform(0.2, 1.0))
    loss, grads = infonce_loss(head, x, xp, negs, tau)
    g = np.concatenate([grads[k].ravel() for k in PARAM_NAMES])
    theta = _flat_params(head)
    h = 1e-6
    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (infonce_loss(_set_flat(head, theta + e), x, xp, negs, tau)[0]
                 - infonce_loss(_set_flat(head, theta - e), x, xp, negs, tau)[0]) / (2 * h)
    # relative check with an absolute floor for finite-difference roundoff on saturated losses
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd) + 1e-7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
def test_loss_nonnegative(seed, tau):
    rng = np.random.default_rng(seed)
    head = ProjectionHead.init(3, 4, 2, seed=seed % 1000)
    loss, _ = infonce_loss(head, *rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), tau)
    assert loss >= -1e-12


def test_batch_loss_requires_positive_tau():
    head = ProjectionHead.init(2, seed=0)
    with pytest.raises(DomainError):
        batch_loss(head, np.zeros((2, 2)), [], tau=0.0)


# training -----------------------------------------------------------------


def test_zero_learning_rate_keeps_weights():
    ds, _ = two_cluster_dataset(seed=0)
    head = ProjectionHead.init(ds.X.shape[1], seed=0)
    out = train_head(ds, head, epochs=3, learning_rate=0.0)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(out, k), getattr(head, k))


def test_training_reduces_loss_and_clusters():
    ds, labels = two_cluster_dataset(seed=0)
    history = []
    head = train_head(ds, epochs=10, seed=0, history=history)
    assert history[-1] < history[0]
    Z = head(ds.X)
    G = Z @ Z.T
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    assert G[same & off].mean() > G[~same].mean()


def test_training_divergence():
    ds, _ = two_cluster_dataset(seed=0)
    with pytest.raises(TrainingError):
        train_head(ds, epochs=10, learning_rate=1.0, seed=0)


def test_no_pairs_returns_copy():
    ds = OfflineDataset(np.eye(2), np.array([[0.5, 0.5], [0.5, 0.5]]))
    head = ProjectionHead.init(2, seed=0)
    out = train_head(ds, head, epochs=2)
    assert out is not head
    np.testing.assert_array_equal(out.W1, head.W1)


def test_head_roundtrip(tmp_path):
    head = ProjectionHead.init(5, 7, 3, seed=2)
    p = tmp_path / "h.json"
    save_head(head, p)
    back = load_head(p)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(back, k), getattr(head, k))
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(back(x), head(x))
    assert back(x[0]).shape == (3,)


def test_head_shape_mismatch(tmp_path):
    import json
    head = ProjectionHead.init(5, 7, 3, seed=2)
    p = tmp_path / "h.json"
    save_head(head, p)
    data = json.loads(p.read_text())
    data["hidden"] = 8
    p.write_text(json.dumps(data))
    with pytest.raises(DomainError):
        load_head(p)
