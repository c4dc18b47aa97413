import os
import subprocess
import sys

import numpy as np
import pytest

from pedkd import _kernels_py, kernels

try:
    from pedkd import _kernels as compiled
except ImportError:  # pragma: no cover - build without the extension
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def naive_im2col(x, k, pad):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    out = np.empty((B, C * k * k, Ho * Wo))
    for c in range(C):
        for di in range(k):
            for dj in range(k):
                out[:, (c * k + di) * k + dj] = xp[:, c, di:di + Ho, dj:dj + Wo].reshape(B, -1)
    return out


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(compiled, marks=needs_ext)], ids=["python", "cython"])
def test_im2col_against_loop_oracle(impl, rng):
    x = rng.normal(size=(2, 3, 5, 6))
    np.testing.assert_allclose(impl.im2col(x, 3, 1), naive_im2col(x, 3, 1), atol=0)


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(compiled, marks=needs_ext)], ids=["python", "cython"])
def test_col2im_is_adjoint_of_im2col(impl, rng):
    # <im2col(x), c> == <x, col2im(c)> for all x, c
    x = rng.normal(size=(2, 3, 5, 6))
    c = rng.normal(size=(2, 27, 30))
    lhs = (impl.im2col(x, 3, 1) * c).sum()
    rhs = (x * impl.col2im(c, 3, 5, 6, 3, 1)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_ext
def test_backends_agree(rng):
    x = rng.normal(size=(4, 8, 16, 16))
    cols = _kernels_py.im2col(x, 3, 1)
    np.testing.assert_allclose(compiled.im2col(x, 3, 1), cols, atol=1e-15)
    np.testing.assert_allclose(compiled.col2im(cols, 8, 16, 16, 3, 1),
                               _kernels_py.col2im(cols, 8, 16, 16, 3, 1), atol=1e-12)
    np.testing.assert_allclose(compiled.avg_pool2(x), _kernels_py.avg_pool2(x), atol=1e-15)


def test_dispatch_accepts_non_contiguous_input(rng):
    x = rng.normal(size=(2, 3, 8, 8)).transpose(0, 1, 3, 2)
    np.testing.assert_allclose(kernels.avg_pool2(x), _kernels_py.avg_pool2(np.ascontiguousarray(x)))


def test_env_var_forces_python_backend():
    env = dict(os.environ, PEDKD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import pedkd; print(pedkd.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
