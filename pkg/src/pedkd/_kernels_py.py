"""Pure-numpy implementations of the convolution kernels.

Same signatures and results as the compiled ``_kernels`` extension; used when
the extension is not built or ``PEDKD_PURE_PYTHON=1`` is set.
"""

import numpy as np


def im2col(x, k, pad):
    B, C, H, W = x.shape
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty((B, C, k, k, Ho, Wo), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            out[:, :, di, dj] = xp[:, :, di:di + Ho, dj:dj + Wo]
    return out.reshape(B, C * k * k, Ho * Wo)


def col2im(cols, C, H, W, k, pad):
    B = cols.shape[0]
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    cols = cols.reshape(B, C, k, k, Ho, Wo)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            xp[:, :, di:di + Ho, dj:dj + Wo] += cols[:, :, di, dj]
    return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])


def avg_pool2(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))
