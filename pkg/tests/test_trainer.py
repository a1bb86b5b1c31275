import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_params
from sparsehash.encoder import EncoderParams, forward, init_params
from sparsehash.trainer import (
    LossConfig,
    NumericalError,
    PairSample,
    SgdConfig,
    as_pair_array,
    pair_gradient,
    pair_loss,
    pairs_from_labels,
    read_log,
    train,
    write_log,
)

vec = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).map(np.array)
cfgs = st.builds(LossConfig, alpha=st.floats(0, 1), lam=st.floats(0, 3), margin=st.floats(0.01, 5))


def two_clusters(rng, n=40, dim=8):
    X = np.vstack([rng.normal(0, 0.3, (n, dim)) + 1.0, rng.normal(0, 0.3, (n, dim)) - 1.0])
    return X / np.linalg.norm(X, axis=1, keepdims=True), np.repeat([0, 1], n)


def test_pair_loss_examples():
    y = np.array([0.3, -0.4])
    assert pair_loss(y, y, 1, LossConfig(alpha=0.2, lam=1, margin=1)) == pytest.approx(2 * 0.2 * 0.7)
    assert pair_loss(y, y, 1, LossConfig(alpha=0.0, lam=1, margin=1)) == 0.0
    assert pair_loss([1, 1], [-1, -1], 0, LossConfig(alpha=0.0, lam=1, margin=2)) == 0.0
    assert pair_loss([0.5, -0.5], [0, 0], 0, LossConfig(alpha=0.1, lam=1, margin=2)) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        pair_loss([1, 0], [1, 0, 0], 1, LossConfig())


@given(vec, vec, st.sampled_from([0, 1]), cfgs)
def test_pair_loss_nonnegative_and_symmetric(y, y2, s, cfg):
    a = pair_loss(y, y2, s, cfg)
    assert a >= 0
    assert a == pytest.approx(pair_loss(y2, y, s, cfg), rel=1e-12, abs=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=-1)
    with pytest.raises(ValueError):
        LossConfig(margin=0)
    with pytest.raises(ValueError):
        SgdConfig(momentum=1.0)
    assert SgdConfig(lr=1.0, gamma=0.5).lr_at(3) == 0.125


def test_pair_sample_and_label_conversion():
    with pytest.raises(ValueError):
        PairSample(1, 1, 0)
    with pytest.raises(ValueError):
        PairSample(0, 1, 2)
    arr = as_pair_array([(0, 1, 1), (2, 3, -1)])
    assert arr[:, 2].tolist() == [1, 0]
    assert as_pair_array([PairSample(0, 1, 1)]).tolist() == [[0, 1, 1]]
    with pytest.raises(IndexError):
        as_pair_array([(0, 9, 1)], n_items=5)


def test_gradient_zero_for_coincident_positive(rng):
    p = random_params(rng, 3, 4, 1)
    x = rng.standard_normal((1, 3))
    g = pair_gradient(forward(p, x), forward(p, x), 1, LossConfig(alpha=0.0), p)
    assert all(np.all(v == 0) for v in g.values())


def test_gradient_zero_for_dead_network(rng):
    p = random_params(rng, 3, 4, 1)
    p.tau[:] = 1e3
    x, x2 = rng.standard_normal((1, 3)), rng.standard_normal((1, 3))
    g = pair_gradient(forward(p, x), forward(p, x2), 0, LossConfig(alpha=0.5), p)
    assert np.all(g["W"] == 0)


def test_gradient_rejects_foreign_trace(rng):
    p, q = random_params(rng, 3, 4, 1), random_params(rng, 3, 4, 2)
    x = rng.standard_normal((1, 3))
    with pytest.raises(RuntimeError):
        pair_gradient(forward(q, x), forward(q, x), 1, LossConfig(), p)


def test_small_step_decreases_loss(rng):
    checked = 0
    while checked < 10:
        p = random_params(rng, 3, 4, 1)
        x, x2 = rng.standard_normal((1, 3)), rng.standard_normal((1, 3))
        cfg = LossConfig(alpha=0.05, lam=1.0, margin=3.0)
        s = int(rng.integers(2))
        base = pair_loss(forward(p, x).y, forward(p, x2).y, s, cfg)
        g = pair_gradient(forward(p, x), forward(p, x2), s, cfg, p)
        if sum(float(np.sum(v**2)) for v in g.values()) < 1e-12:
            continue
        lr = 1.0
        for _ in range(20):
            q = p.copy()
            q.W -= lr * g["W"]
            q.S -= lr * g["S"]
            q.tau = np.maximum(q.tau - lr * g["tau"], 0)
            if pair_loss(forward(q, x).y, forward(q, x2).y, s, cfg) < base:
                break
            lr /= 2
        else:
            pytest.fail("no decrease within 20 halvings")
        checked += 1


def test_identical_positive_pair_is_a_fixed_point(rng):
    X = np.vstack([rng.standard_normal(5)] * 2)
    init = init_params(X, 2, seed=0)
    res = train(X, [(0, 1, 1)], LossConfig(alpha=0.0), SgdConfig(max_epochs=5), init)
    assert all(r.mean_loss == 0 for r in res.log)
    for k in ("W", "S", "tau"):
        assert np.array_equal(getattr(res.params, k), getattr(init, k))


def test_two_clusters_separate(rng):
    X, lab = two_clusters(rng)
    pairs = pairs_from_labels(lab, 200, 200, seed=0)
    res = train(X, pairs, LossConfig(alpha=0.01, lam=0.5, margin=6.0), SgdConfig(lr=0.01, max_epochs=30), init_params(X, 8))
    last = res.log[-1]
    assert last.mean_pos_d1 < last.mean_neg_d1
    tail = res.log[-10:]
    assert np.mean([r.mean_neg_d1 - r.mean_pos_d1 for r in tail]) > 0


def test_sparsity_nonincreasing_in_alpha(rng):
    X, lab = two_clusters(rng)
    pairs = pairs_from_labels(lab, 200, 600, seed=0)
    spars = []
    for alpha in (0.0, 0.01, 0.1):
        res = train(X, pairs, LossConfig(alpha=alpha, lam=0.05, margin=8.0), SgdConfig(lr=0.003, max_epochs=20), init_params(X, 8))
        spars.append(res.log[-1].mean_sparsity)
    assert spars[0] >= spars[1] >= spars[2]


def test_training_is_reproducible(rng):
    X, lab = two_clusters(rng, n=15)
    pairs = pairs_from_labels(lab, 30, 30, seed=3)
    cfg, sgd = LossConfig(), SgdConfig(max_epochs=3, seed=7)
    a, b = train(X, pairs, cfg, sgd, init_params(X, 4)), train(X, pairs, cfg, sgd, init_params(X, 4))
    assert all(np.array_equal(getattr(a.params, k), getattr(b.params, k)) for k in ("W", "S", "tau"))
    assert a.log == b.log


def test_non_finite_loss_aborts(rng):
    X, lab = two_clusters(rng, n=10)
    X[3] = np.nan
    with pytest.raises(NumericalError, match="epoch 0"):
        train(X, pairs_from_labels(lab, 20, 20), LossConfig(), SgdConfig(max_epochs=1, batch_size=40), init_params(X[4:], 3))


def test_pairs_from_labels(rng):
    lab = rng.integers(0, 4, 60)
    P = pairs_from_labels(lab, 50, 70, seed=1)
    assert P.shape == (120, 3)
    pos, neg = P[P[:, 2] == 1], P[P[:, 2] == 0]
    assert np.all(lab[pos[:, 0]] == lab[pos[:, 1]]) and np.all(pos[:, 0] != pos[:, 1])
    assert np.all(lab[neg[:, 0]] != lab[neg[:, 1]])
    assert np.array_equal(P, pairs_from_labels(lab, 50, 70, seed=1))


def test_log_roundtrip(tmp_path, rng):
    X, lab = two_clusters(rng, n=10)
    res = train(X, pairs_from_labels(lab, 20, 20), LossConfig(), SgdConfig(max_epochs=3), init_params(X, 3))
    path = write_log(tmp_path / "log.tsv", res.log)
    assert read_log(path) == res.log
    write_log(tmp_path / "again.tsv", read_log(path))
    assert (tmp_path / "again.tsv").read_bytes() == path.read_bytes()
