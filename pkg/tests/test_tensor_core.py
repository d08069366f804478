import numpy as np
import pytest
from hypothesis import given, strategies as st

from loradp.errors import InvalidArgumentError, ShapeError
from loradp.tensor_core import (RngStream, as_matrix, frobenius_norm, frozen, matmul, row_l2_norms,
                                sample_gaussian_matrix)

u64 = st.integers(0, 2 ** 64 - 1)


def test_sample_shape_and_mean_over_resamples():
    base = RngStream(7)
    assert sample_gaussian_matrix(base, 2, 3, 1.0).shape == (2, 3)
    n = 20_000
    first = np.array([sample_gaussian_matrix(base.substream(i), 2, 3, 1.0)[0, 0] for i in range(n)])
    assert abs(first.mean()) <= 4.0 / np.sqrt(n)
    assert abs(first.var() - 1.0) <= 0.05


def test_tiny_std():
    m = sample_gaussian_matrix(RngStream(3), 1, 1, 1e-12)
    assert np.all(np.abs(m) <= 1e-10)


def test_same_stream_is_bitwise_identical():
    s = RngStream(7)
    assert np.array_equal(sample_gaussian_matrix(s, 4, 4, 0.5), sample_gaussian_matrix(s, 4, 4, 0.5))


def test_substreams_differ():
    s = RngStream(7)
    a = sample_gaussian_matrix(s.substream(0), 4, 4, 1.0)
    b = sample_gaussian_matrix(s.substream(1), 4, 4, 1.0)
    assert not np.array_equal(a, b)


@given(u64, u64)
def test_rng_stream_accepts_full_u64_range(seed, sid):
    s = RngStream(seed, sid)
    x = s.generator().standard_normal(3)
    assert np.array_equal(x, RngStream(seed, sid).generator().standard_normal(3))


@pytest.mark.parametrize("seed", [-1, 2 ** 64, 1.5])
def test_rng_stream_rejects_bad_seed(seed):
    with pytest.raises(InvalidArgumentError):
        RngStream(seed)


@pytest.mark.parametrize("rows, cols, std", [(0, 2, 1.0), (2, 0, 1.0), (2, 2, 0.0), (2, 2, -1.0),
                                             (2, 2, float("nan"))])
def test_sample_rejects_bad_arguments(rows, cols, std):
    with pytest.raises(InvalidArgumentError):
        sample_gaussian_matrix(RngStream(0), rows, cols, std)


def test_matmul_identity_and_hand_case(gen):
    m = gen.standard_normal((3, 5))
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), np.array([[17.0], [39.0]]))


def test_gram_product_is_symmetric():
    a = sample_gaussian_matrix(RngStream(1), 8, 20, 0.5)
    s = matmul(a.T, a)
    assert np.max(np.abs(s - s.T)) == 0


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_frobenius_norm_cases(gen):
    assert frobenius_norm(np.zeros((3, 3))) == 0
    assert frobenius_norm([[3, 4]]) == 5
    m = gen.standard_normal((5, 5))
    assert abs(frobenius_norm(m) - np.sqrt(np.trace(m.T @ m))) <= 1e-12


def test_row_norms_cases():
    assert np.array_equal(row_l2_norms(np.eye(3)), [1, 1, 1])
    assert np.array_equal(row_l2_norms([[1, 2, 2], [0, 0, 0]]), [3, 0])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32))
def test_row_norms_square_sum_to_frobenius(n, m, seed):
    x = np.random.default_rng(seed).standard_normal((n, m))
    assert abs(np.sum(row_l2_norms(x) ** 2) - frobenius_norm(x) ** 2) <= 1e-12 * max(1.0, frobenius_norm(x) ** 2)


def test_as_matrix_validation():
    with pytest.raises(ShapeError):
        as_matrix(np.ones(3))
    with pytest.raises(InvalidArgumentError):
        as_matrix([[np.inf]])


def test_frozen_is_read_only():
    x = frozen(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        x[0, 0] = 1.0
