import os
import subprocess
import sys

import numpy as np
import pytest

from textkg import kernels

needs_numba = pytest.mark.skipif(kernels.BACKEND != "numba", reason="numba backend disabled")


def softmax_case(rng):
    logits = rng.standard_normal((15, 6))
    mask = np.where(rng.random((5, 6)) < 0.3, -np.inf, 0.0)
    mask[:, 2] = 0.0
    mask[4] = -np.inf
    return logits, mask


@needs_numba
def test_masked_softmax_parity():
    rng = np.random.default_rng(1)
    logits, mask = softmax_case(rng)
    y_np, e_np = kernels.np_masked_softmax(logits, mask)
    y_nb, e_nb = kernels.masked_softmax(logits, mask)
    np.testing.assert_allclose(y_nb, y_np, rtol=0, atol=1e-14)
    assert np.array_equal(e_nb, e_np)
    assert np.array_equal(y_nb == 0.0, y_np == 0.0)


@needs_numba
def test_softmax_backward_parity():
    rng = np.random.default_rng(2)
    y = kernels.np_masked_softmax(*softmax_case(rng))[0]
    dy = rng.standard_normal(y.shape)
    np.testing.assert_allclose(kernels.softmax_backward(y, dy), kernels.np_softmax_backward(y, dy),
                               rtol=0, atol=1e-13)


@needs_numba
def test_layer_norm_parity():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((7, 9))
    g, b = rng.standard_normal(9), rng.standard_normal(9)
    for a, c in zip(kernels.layer_norm(x, g, b), kernels.np_layer_norm(x, g, b)):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)
    _, xhat, rstd = kernels.np_layer_norm(x, g, b)
    dy = rng.standard_normal(x.shape)
    for a, c in zip(kernels.layer_norm_backward(dy, xhat, rstd, g),
                    kernels.np_layer_norm_backward(dy, xhat, rstd, g)):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)


@needs_numba
def test_gelu_parity():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 11)) * 4
    dy = rng.standard_normal(x.shape)
    np.testing.assert_allclose(kernels.gelu(x), kernels.np_gelu(x), rtol=0, atol=1e-14)
    np.testing.assert_allclose(kernels.gelu_backward(x, dy), kernels.np_gelu_backward(x, dy),
                               rtol=0, atol=1e-13)


@needs_numba
def test_lcs_parity():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.integers(0, 5, rng.integers(0, 12))
        b = rng.integers(0, 5, rng.integers(0, 12))
        assert kernels.lcs_length(a, b) == kernels.np_lcs_length(a, b)


def test_lcs_examples():
    assert kernels.lcs_length(np.array([1, 2, 3, 4]), np.array([1, 3, 4])) == 3
    assert kernels.lcs_length(np.array([1, 2]), np.array([3, 4])) == 0
    assert kernels.lcs_length(np.zeros(0, np.int64), np.array([3, 4])) == 0


def test_gelu_values():
    np.testing.assert_allclose(kernels.np_gelu(np.array([0.0, 1.0])), [0.0, 0.8411919906082768],
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("flag,expect", [("1", "numpy"), ("0", kernels.BACKEND)])
def test_env_flag_selects_backend(flag, expect):
    env = dict(os.environ, TEXTKG_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from textkg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == expect
