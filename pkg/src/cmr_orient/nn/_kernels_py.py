"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results to the bit.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, ho, wo):
    B, C = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (B, C, ho, wo, k, k) -> (B, ho, wo, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * ho * wo, C * k * k)


def col2im(cols, B, C, hp, wp, k, stride, ho, wo):
    xp = np.zeros((B, C, hp, wp), dtype=cols.dtype)
    c6 = cols.reshape(B, ho, wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += c6[:, :, ki, kj]
    return xp


def maxpool2x2_forward(x):
    B, C, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, : 2 * ho, : 2 * wo].reshape(B, C, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho, wo, 4)
    idx = np.argmax(win, axis=-1).astype(np.int8)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(dout, idx, h, w):
    B, C, ho, wo = dout.shape
    win = np.zeros((B, C, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = np.zeros((B, C, h, w), dtype=dout.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = win.reshape(B, C, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * ho, 2 * wo)
    return dx
