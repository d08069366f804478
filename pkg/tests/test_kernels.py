import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from loradp import kernels

seeds = st.integers(0, 2 ** 32)


def both(name, *args):
    np_fn, nb_fn = kernels.IMPLEMENTATIONS[name]
    return np_fn(*args), nb_fn(*args)


def test_every_kernel_has_both_paths():
    for name, (np_fn, nb_fn) in kernels.IMPLEMENTATIONS.items():
        assert np_fn is not nb_fn, name


@given(seeds, st.integers(1, 6), st.integers(2, 20))
def test_row_noise_element(seed, r, m):
    g = np.random.default_rng(seed)
    draws, q = g.standard_normal((5, r, m)), g.standard_normal(m)
    a, b = both("row_noise_element", draws, q, m - 1)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@given(seeds, st.integers(1, 8))
def test_gram_pair(seed, r):
    draws = np.random.default_rng(seed).standard_normal((7, r, 2))
    (d1, o1), (d2, o2) = both("gram_pair", draws)
    assert np.allclose(d1, d2, atol=1e-13) and np.allclose(o1, o2, atol=1e-13)
    assert np.allclose(o1, np.einsum("tk,tk->t", draws[:, :, 0], draws[:, :, 1]), atol=1e-13)


@given(seeds, st.integers(1, 300))
def test_ks_one_sample(seed, n):
    x = np.sort(np.random.default_rng(seed).standard_normal(n))
    a, b = both("ks_one_sample", special.ndtr(x))
    assert a == pytest.approx(b, abs=1e-15)
    # oracle: sup over ECDF jumps on both sides
    cdf = special.ndtr(x)
    i = np.arange(1, n + 1)
    assert a == pytest.approx(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)), abs=1e-15)


@given(seeds, st.integers(1, 60), st.integers(1, 60))
def test_ks_two_sample(seed, n1, n2):
    g = np.random.default_rng(seed)
    x = np.sort(g.integers(-5, 5, n1).astype(float))
    y = np.sort(g.integers(-5, 5, n2).astype(float))
    a, b = both("ks_two_sample", x, y)
    grid = np.union1d(x, y)
    oracle = np.max(np.abs(np.searchsorted(x, grid, "right") / n1 - np.searchsorted(y, grid, "right") / n2))
    assert a == pytest.approx(oracle, abs=1e-15) and b == pytest.approx(oracle, abs=1e-15)


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=30), st.lists(st.integers(-3, 3), min_size=1, max_size=30))
def test_auc_lower(a, b):
    x, y = np.array(a, dtype=float), np.array(b, dtype=float)
    r1, r2 = both("auc_lower", x, y)
    oracle = (np.sum(x[:, None] < y[None, :]) + 0.5 * np.sum(x[:, None] == y[None, :])) / (x.size * y.size)
    assert r1 == oracle and r2 == oracle


@given(seeds, st.floats(0.01, 10))
def test_clip_rows(seed, c):
    flat = np.random.default_rng(seed).standard_normal((6, 9)) * 3
    flat[2] = 0
    a, b = both("clip_rows", flat, c)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)
    assert np.all(np.linalg.norm(a, axis=1) <= c * (1 + 1e-12))


@given(seeds, st.integers(1, 5))
def test_lora_row_moments(seed, r):
    g = np.random.default_rng(seed)
    grad, draws = g.standard_normal((4, 7)), g.standard_normal((3, r, 7))
    (s1, q1), (s2, q2) = both("lora_row_moments", grad, draws)
    noise = np.stack([grad @ a.T @ a - grad for a in draws])
    for sums, sumsq in ((s1, q1), (s2, q2)):
        assert np.allclose(sums, noise.sum(axis=(0, 2)), atol=1e-11)
        assert np.allclose(sumsq, (noise ** 2).sum(axis=(0, 2)), rtol=1e-12)


@given(seeds)
def test_bin_counts(seed):
    g = np.random.default_rng(seed)
    x = np.sort(g.standard_normal(200))
    edges = np.sort(g.standard_normal(9))
    a, b = both("bin_counts", x, edges)
    assert np.array_equal(a, b)
    assert np.array_equal(a, np.bincount(np.searchsorted(edges, x, "right"), minlength=10))


def _run_with_backend(value, code):
    env = dict(os.environ, LORADP_BACKEND=value)
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)


def test_numpy_backend_flag_selects_fallback():
    code = ("import json; from loradp import kernels, _accel; "
            "print(json.dumps([_accel.BACKEND, kernels.auc_lower is kernels.IMPLEMENTATIONS['auc_lower'][0]]))")
    res = _run_with_backend("numpy", code)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout) == ["numpy", True]


def test_invalid_backend_flag_fails_loudly():
    res = _run_with_backend("fortran", "import loradp.kernels")
    assert res.returncode != 0
    assert "LORADP_BACKEND" in res.stderr
