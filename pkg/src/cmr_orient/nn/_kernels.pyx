# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the loop-heavy layer kernels.

Must stay bit-identical to ``_kernels_py``: same summation order in
``col2im``, same first-occurrence rule in max pooling. Do not build with
-ffast-math.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    """Rows ordered (b, i, j), columns ordered (c, ki, kj)."""
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t b, c, ki, kj, i, j, row, col, y0, x0
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B * ho * wo, C * k * k), dtype=dtype)
    cdef floating[:, ::1] cols = out
    with nogil:
        for b in range(B):
            for i in range(ho):
                y0 = i * stride
                for j in range(wo):
                    x0 = j * stride
                    row = (b * ho + i) * wo + j
                    col = 0
                    for c in range(C):
                        for ki in range(k):
                            for kj in range(k):
                                cols[row, col] = xp[b, c, y0 + ki, x0 + kj]
                                col += 1
    return out


def col2im(floating[:, ::1] cols, int B, int C, int hp, int wp, int k, int stride, int ho, int wo):
    """Scatter-add the columns back onto a zero ``(B, C, hp, wp)`` grid.

    Each target element accumulates its contributions in (ki, kj) order.
    """
    cdef Py_ssize_t b, c, ki, kj, i, j, col
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = out
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        col = (c * k + ki) * k + kj
                        for i in range(ho):
                            for j in range(wo):
                                xp[b, c, i * stride + ki, j * stride + kj] += cols[(b * ho + i) * wo + j, col]
    return out


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    cdef Py_ssize_t b, c, i, j
    cdef floating best, v
    cdef signed char arg
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B, C, ho, wo), dtype=dtype)
    idx = np.empty((B, C, ho, wo), dtype=np.int8)
    cdef floating[:, :, :, ::1] o = out
    cdef signed char[:, :, :, ::1] a = idx
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, c, 2 * i, 2 * j]
                        arg = 0
                        v = x[b, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[b, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[b, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 3
                        o[b, c, i, j] = best
                        a[b, c, i, j] = arg
    return out, idx


def maxpool2x2_backward(floating[:, :, :, ::1] dout, signed char[:, :, :, ::1] idx, int h, int w):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[1]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t b, c, i, j
    cdef signed char arg
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    for j in range(wo):
                        arg = idx[b, c, i, j]
                        dx[b, c, 2 * i + (arg >> 1), 2 * j + (arg & 1)] = dout[b, c, i, j]
    return out
