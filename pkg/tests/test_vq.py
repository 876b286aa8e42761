import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from vqprivacy import vq
from vqprivacy.errors import ConfigError, EmptyInputError, InsufficientSamplesError, ShapeError
from vqprivacy.numerics import RngStream, finite_diff_grad
from oracles import brute_force_nearest, ema_closed_form, laplace_prototypes


def make_cb(protos, decay=0.99, eps=1e-5, counts=None):
    protos = np.asarray(protos, dtype=float)
    counts = np.ones(len(protos)) if counts is None else np.asarray(counts, dtype=float)
    return vq.Codebook(protos, counts, protos * counts[:, None], decay, eps)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# quantize

def test_exact_match():
    cb = make_cb([[0, 0], [1, 1]])
    r = vq.quantize([[1.0, 1.0]], cb)
    assert r.indices[0] == 1
    assert r.codebook_loss == 0.0 and r.commitment_loss == 0.0


def test_equidistant_goes_to_lowest():
    cb = make_cb([[0, 0], [1, 1]])
    assert vq.quantize([[0.5, 0.5]], cb).indices[0] == 0


def test_random_frames_match_oracle():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(64, 3))
    cb = make_cb(rng.normal(size=(8, 3)))
    r = vq.quantize(h, cb)
    assert_array_equal(r.indices, brute_force_nearest(h, cb.prototypes))
    assert_array_equal(r.quantized, cb.prototypes[r.indices])


def test_quantize_errors():
    cb = make_cb([[0, 0]])
    with pytest.raises(ShapeError):
        vq.quantize(np.ones((2, 3)), cb)
    with pytest.raises(EmptyInputError):
        vq.quantize(np.ones((0, 2)), cb)


@given(st.integers(1, 30), st.integers(1, 10), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_argmin_certificate(J, V, D, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(J, D))
    cb = make_cb(rng.normal(size=(V, D)))
    r = vq.quantize(h, cb)
    d_all = ((h[:, None, :] - cb.prototypes[None]) ** 2).sum(-1)
    d_sel = ((h - r.quantized) ** 2).sum(-1)
    assert np.all(d_sel[:, None] <= d_all + 1e-12)


@given(st.integers(1, 20), st.integers(1, 10), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_idempotent_on_prototypes(J, V, D, seed):
    rng = np.random.default_rng(seed)
    cb = make_cb(rng.normal(size=(V, D)))
    q = vq.quantize(rng.normal(size=(J, D)), cb).quantized
    assert_array_equal(vq.quantize(q, cb).quantized, q)


# losses

def test_loss_values():
    assert vq.codebook_loss([[1.0, 0.0]], [[0.0, 0.0]]) == 1.0
    assert vq.commitment_loss([[1.0, 0.0], [0.0, 1.0]], np.zeros((2, 2))) == 1.0
    h = np.array([[1.0, 2.0]])
    assert vq.codebook_loss(h, h) == 0.0
    assert_array_equal(vq.commitment_loss_grad(h, h), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        vq.commitment_loss(np.ones((2, 2)), np.ones((3, 2)))


@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_losses_equal_on_same_inputs(J, D, seed):
    rng = np.random.default_rng(seed)
    h, q = rng.normal(size=(J, D)), rng.normal(size=(J, D))
    assert vq.codebook_loss(h, q) == vq.commitment_loss(h, q)


def test_codebook_loss_direct_formula_and_gradient():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(12, 3))
    cb = make_cb(rng.normal(size=(4, 3)))
    idx = vq.quantize(h, cb).indices
    q = cb.prototypes[idx]
    direct = sum(sum((h[j, d] - q[j, d]) ** 2 for d in range(3)) for j in range(12)) / 12
    assert abs(vq.codebook_loss(h, q) - direct) < 1e-12

    def f(E):
        return vq.codebook_loss(h, E[idx])

    fd = finite_diff_grad(f, cb.prototypes)
    assert_allclose(vq.codebook_loss_grad(h, idx, cb), fd, atol=1e-6)


def test_commitment_gradient_fd():
    rng = np.random.default_rng(5)
    h, q = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    fd = finite_diff_grad(lambda x: vq.commitment_loss(x, q), h)
    assert_allclose(vq.commitment_loss_grad(h, q), fd, atol=1e-6)


def test_ste_identity():
    g = np.random.default_rng(0).normal(size=(5, 3))
    assert vq.ste_backward(g) is g
    assert_array_equal(vq.ste_backward(vq.ste_backward(g)), g)
    assert_array_equal(vq.ste_backward(np.zeros((2, 2))), np.zeros((2, 2)))


# EMA

def test_ema_full_decay_is_noop():
    rng = np.random.default_rng(0)
    cb = make_cb(rng.normal(size=(3, 2)), decay=1.0, counts=[2.0, 1.0, 4.0])
    h = rng.normal(size=(10, 2))
    out = vq.ema_update(cb, h, vq.quantize(h, cb).indices)
    assert_array_equal(out.prototypes, cb.prototypes)
    assert_array_equal(out.ema_counts, cb.ema_counts)
    assert_array_equal(out.ema_sums, cb.ema_sums)


def test_ema_zero_decay_single_prototype():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(25, 3)) + 4.0
    cb = make_cb([[0.0, 0.0, 0.0], [50.0, 50.0, 50.0]], decay=0.0, eps=1e-5)
    idx = np.zeros(25, dtype=np.int64)
    out = vq.ema_update(cb, h, idx)
    assert np.max(np.abs(out.prototypes[0] - h.mean(axis=0))) < 1e-3


def test_ema_two_steps_closed_form():
    rng = np.random.default_rng(2)
    g, eps = 0.9, 1e-5
    cb = make_cb(rng.normal(size=(4, 3)), decay=g, eps=eps, counts=[1.0, 2.0, 0.5, 3.0])
    N0, m0 = cb.ema_counts.copy(), cb.ema_sums.copy()
    counts, sums = [], []
    for _ in range(2):
        h = rng.normal(size=(20, 3))
        idx = vq.quantize(h, cb).indices
        counts.append(np.bincount(idx, minlength=4))
        sums.append(np.array([h[idx == i].sum(axis=0) for i in range(4)]))
        cb = vq.ema_update(cb, h, idx)
    N, m = ema_closed_form(N0, m0, counts, sums, g)
    assert_allclose(cb.ema_counts, N, rtol=0, atol=1e-12)
    assert_allclose(cb.ema_sums, m, rtol=0, atol=1e-12)
    assert_allclose(cb.prototypes, laplace_prototypes(N, m, eps), rtol=0, atol=1e-12)


def test_ema_does_not_mutate_input():
    cb = make_cb([[0.0], [1.0]])
    snap = cb.copy()
    vq.ema_update(cb, [[0.2], [0.9]], np.array([0, 1]))
    assert_array_equal(cb.prototypes, snap.prototypes)
    assert_array_equal(cb.ema_counts, snap.ema_counts)


def test_decay_range():
    with pytest.raises(ConfigError):
        make_cb([[0.0]], decay=1.5)
    with pytest.raises(ConfigError):
        make_cb([[0.0]], eps=0.0)


def three_clusters(n=300, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    return np.vstack([c + 0.3 * rng.normal(size=(n, 2)) for c in centers])


def test_ema_kmeans_fixed_point():
    X = three_clusters()
    # one seed point per cluster, so cell membership is settled from the start
    seeds = [c * 300 + RngStream(4).child("pick", c).integers(300, 1)[0] for c in range(3)]
    cb = vq.init_codebook(X[seeds], 3, RngStream(4), decay=0.99)
    for _ in range(200):
        cb = vq.ema_update(cb, X, vq.quantize(X, cb).indices)
    idx = vq.quantize(X, cb).indices
    for i in range(3):
        assert np.max(np.abs(cb.prototypes[i] - X[idx == i].mean(axis=0))) < 1e-3


# init / restart / perplexity

def test_init_permutation_when_n_equals_v():
    X = np.random.default_rng(0).normal(size=(6, 2))
    cb = vq.init_codebook(X, 6, RngStream(1))
    assert sorted(map(tuple, cb.prototypes)) == sorted(map(tuple, X))


def test_init_deterministic_and_members():
    X = np.random.default_rng(0).normal(size=(1000, 3))
    a = vq.init_codebook(X, 16, RngStream(7))
    b = vq.init_codebook(X, 16, RngStream(7))
    assert_array_equal(a.prototypes, b.prototypes)
    rows = {tuple(r) for r in X}
    assert all(tuple(p) in rows for p in a.prototypes)
    assert len({tuple(p) for p in a.prototypes}) == 16


def test_init_errors():
    with pytest.raises(InsufficientSamplesError):
        vq.init_codebook(np.ones((3, 2)), 4, RngStream(0))
    with pytest.raises(ConfigError):
        vq.init_codebook(np.ones((3, 2)), 0, RngStream(0))


def test_restart_noop_when_all_used():
    rng = np.random.default_rng(0)
    cb = make_cb(rng.normal(size=(4, 2)))
    h = cb.prototypes.copy()
    for _ in range(60):
        cb = vq.record_usage(cb, vq.quantize(h, cb).indices)
    out = vq.restart_dead_prototypes(cb, h, RngStream(0), 50)
    assert_array_equal(out.prototypes, cb.prototypes)


def test_restart_replaces_dead_row():
    rng = np.random.default_rng(1)
    cb = make_cb([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [100.0, 100.0]])
    h = rng.uniform(0, 1, size=(30, 2))
    for _ in range(50):
        cb = vq.record_usage(cb, vq.quantize(h, cb).indices)
    assert cb.unused_steps[3] == 50
    out = vq.restart_dead_prototypes(cb, h, RngStream(3), 50)
    assert any(np.array_equal(out.prototypes[3], row) for row in h)
    assert_array_equal(out.prototypes[:3], cb.prototypes[:3])
    assert out.unused_steps[3] == 0
    # the restarted prototype wins at least one frame of its seeding batch
    assert 3 in vq.quantize(h, out).indices


@given(st.integers(1, 6), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_restarted_prototypes_all_win(n_dead, J, seed):
    rng = np.random.default_rng(seed)
    V = n_dead + 2
    protos = np.vstack([rng.normal(size=(2, 3)), 1e3 + rng.normal(size=(n_dead, 3))])
    cb = make_cb(protos)
    cb.unused_steps[2:] = 10
    h = rng.normal(size=(J, 3))
    out = vq.restart_dead_prototypes(cb, h, RngStream(seed), 10)
    won = set(vq.quantize(h, out).indices.tolist())
    # distinct seeding frames: at least min(n_dead, distinct frames) restarts win
    assert len(won & set(range(2, V))) >= min(n_dead, J)


def test_perplexity_cases():
    assert abs(vq.codebook_perplexity(np.arange(8).repeat(5), 8) - 8.0) < 1e-9
    assert vq.codebook_perplexity(np.zeros(10, dtype=int), 8) == 1.0
    with pytest.raises(EmptyInputError):
        vq.codebook_perplexity([], 4)


@given(st.lists(st.integers(0, 9), min_size=1, max_size=200))
def test_perplexity_entropy_oracle(idx):
    n = len(idx)
    H = 0.0
    for i in set(idx):
        p = idx.count(i) / n
        H -= p * math.log(p)
    ppl = vq.codebook_perplexity(idx, 10)
    assert abs(ppl - math.exp(H)) < 1e-12 * math.exp(H)
    assert 1.0 - 1e-12 <= ppl <= 10 + 1e-12


def test_codebook_roundtrip(tmp_path):
    cb = make_cb(np.random.default_rng(0).normal(size=(5, 3)), decay=0.95)
    cb.unused_steps[2] = 7
    vq.save_codebook(cb, tmp_path / "cb.npz")
    back = vq.load_codebook(tmp_path / "cb.npz")
    assert_array_equal(back.prototypes, cb.prototypes)
    assert_array_equal(back.unused_steps, cb.unused_steps)
    assert back.decay == 0.95
