# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels for 3x3-style same-padded convolutions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int k, int pad):
    """(B, C, H, W) -> (B, C*k*k, Ho*Wo) patch matrix, stride 1."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1
    out_arr = np.zeros((B, C * k * k, Ho * Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, di, dj, i, j, row, si, sj
    with nogil:
        for b in range(B):
            for c in range(C):
                for di in range(k):
                    for dj in range(k):
                        row = (c * k + di) * k + dj
                        for i in range(Ho):
                            si = i + di - pad
                            if si < 0 or si >= H:
                                continue
                            for j in range(Wo):
                                sj = j + dj - pad
                                if sj < 0 or sj >= W:
                                    continue
                                out[b, row, i * Wo + j] = x[b, c, si, sj]
    return out_arr


def col2im(const double[:, :, ::1] cols, int C, int H, int W, int k, int pad):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the image."""
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1
    out_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, di, dj, i, j, row, si, sj
    with nogil:
        for b in range(B):
            for c in range(C):
                for di in range(k):
                    for dj in range(k):
                        row = (c * k + di) * k + dj
                        for i in range(Ho):
                            si = i + di - pad
                            if si < 0 or si >= H:
                                continue
                            for j in range(Wo):
                                sj = j + dj - pad
                                if sj < 0 or sj >= W:
                                    continue
                                out[b, c, si, sj] += cols[b, row, i * Wo + j]
    return out_arr


def avg_pool2(const double[:, :, :, ::1] x):
    """Non-overlapping 2x2 mean pooling; H and W must be even."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    out_arr = np.empty((B, C, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        out[b, c, i, j] = 0.25 * (x[b, c, 2 * i, 2 * j] + x[b, c, 2 * i, 2 * j + 1]
                                                  + x[b, c, 2 * i + 1, 2 * j] + x[b, c, 2 * i + 1, 2 * j + 1])
    return out_arr
