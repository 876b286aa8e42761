import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from vqprivacy.errors import EmptyInputError, NumericError, OracleError, ShapeError
from vqprivacy.numerics import RngStream, as_matrix, finite_diff_grad, matmul


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_zero():
    A = np.arange(6.0).reshape(2, 3)
    assert_array_equal(matmul(np.eye(2), A), A)
    assert_array_equal(matmul(np.zeros((2, 2)), A), np.zeros((2, 3)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_and_finiteness():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 1)))
    with pytest.raises(NumericError):
        matmul(np.array([[np.inf]]), np.array([[1.0]]))


def test_as_matrix_rejects_vectors():
    with pytest.raises(ShapeError):
        as_matrix(np.ones(4))
    assert as_matrix([[1, 2]]).dtype == np.float64


@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(1, 16),
       st.integers(0, 2**32 - 1))
def test_matmul_associative(m, n, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=s) for s in ((m, n), (n, p), (p, q)))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    scale = np.abs(a) @ np.abs(b) @ np.abs(c)
    assert np.all(np.abs(left - right) <= 1e-10 * scale + 1e-300)


def test_gaussian_deterministic():
    assert_array_equal(RngStream(5).gaussian(100), RngStream(5).gaussian(100))
    assert not np.array_equal(RngStream(5).gaussian(10), RngStream(6).gaussian(10))


def test_gaussian_moments():
    x = RngStream(123).gaussian(10**5)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.03


def test_gaussian_needs_positive_n():
    with pytest.raises(EmptyInputError):
        RngStream(0).gaussian(0)


def test_position_counts_values():
    r = RngStream(1)
    r.gaussian(3)
    r.integers(10, 4)
    r.uniform(2)
    assert r.position == 9


def test_seed_range():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)
    RngStream(2**64 - 1).gaussian(1)


def test_children_ignore_parent_consumption():
    a = RngStream(9)
    b = RngStream(9)
    b.gaussian(50)
    assert_array_equal(a.child("x", 3).gaussian(5), b.child("x", 3).gaussian(5))
    assert not np.array_equal(a.child("x", 3).gaussian(5), a.child("x", 4).gaussian(5))
    assert not np.array_equal(a.child("x", 0).gaussian(5), a.child("y", 0).gaussian(5))
    # nesting order matters
    assert not np.array_equal(a.child("x").child("y").gaussian(5),
                              a.child("y").child("x").gaussian(5))


@given(st.integers(0, 2**64 - 1),
       st.lists(st.sampled_from(["gaussian", "uniform", "integers", "perm"]), min_size=1, max_size=8))
def test_replay_bit_identical(seed, ops):
    def run():
        r = RngStream(seed)
        out = []
        for op in ops:
            if op == "gaussian":
                out.append(r.gaussian(3))
            elif op == "uniform":
                out.append(r.uniform(2))
            elif op == "integers":
                out.append(r.integers(7, 3).astype(float))
            else:
                out.append(r.permutation(4).astype(float))
        return np.concatenate(out), r.position

    (x, p), (y, q) = run(), run()
    assert_array_equal(x, y)
    assert p == q


def test_fd_constant_is_zero():
    assert_array_equal(finite_diff_grad(lambda x: 3.0, np.ones(4)), np.zeros(4))


def test_fd_sum_of_squares():
    g = finite_diff_grad(lambda x: float(np.sum(x ** 2)), np.array([1.0, 2.0]), eps=1e-5)
    assert_allclose(g, [2.0, 4.0], atol=1e-6)


def test_fd_leaves_input_untouched():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    x0 = x.copy()
    finite_diff_grad(lambda v: float(np.prod(v)), x)
    assert_array_equal(x, x0)


def test_fd_non_finite_raises():
    with pytest.raises(OracleError), np.errstate(invalid="ignore", divide="ignore"):
        finite_diff_grad(lambda x: float(np.log(x[0])), np.array([0.0]))
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.ones(2), eps=0.0)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_fd_quadratic_forms(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    b = rng.normal(size=n)
    x = rng.normal(size=n)
    f = lambda v: float(v @ A @ v + b @ v)
    exact = (A + A.T) @ x + b
    g = finite_diff_grad(f, x, eps=1e-5)
    assert np.linalg.norm(g - exact) <= 1e-6 * max(np.linalg.norm(exact), 1.0)
