"""Kernel backend selection.

The compiled Cython extension is preferred; the numpy fallback is used when it
is missing or when the environment variable ``PEDKD_PURE_PYTHON`` is set to a
non-empty value other than ``0``.
"""

import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("PEDKD_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def im2col(x, k, pad):
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), k, pad)


def col2im(cols, C, H, W, k, pad):
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), C, H, W, k, pad)


def avg_pool2(x):
    return _impl.avg_pool2(np.ascontiguousarray(x, dtype=np.float64))


__all__ = ["BACKEND", "im2col", "col2im", "avg_pool2"]
