"""Forward/backward pairs for the handful of layers the classifier uses.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes ``(dout, cache)``. Arrays keep whatever float dtype they
come in with: float32 for training, float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np

from . import backend


class Parameter:
    """A learnable array with its gradient and Adam moment buffers."""

    def __init__(self, value, frozen: bool = False):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.frozen = frozen
        self.m = None
        self.v = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def reset_moments(self):
        self.m = None
        self.v = None

    def __repr__(self):
        return f"Parameter(shape={self.shape}, frozen={self.frozen})"


class BatchNormState:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.update_running_stats = True


def conv2d_forward(x, weight, bias, stride: int = 1, pad: int = 0):
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    F, Cw, K, K2 = weight.shape
    if Cw != C or K != K2 or bias.shape != (F,):
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    if stride < 1 or K > H + 2 * pad or K > W + 2 * pad:
        raise ValueError(f"kernel {K} does not fit input {H}x{W} with pad {pad} / stride {stride}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    ho = (H + 2 * pad - K) // stride + 1
    wo = (W + 2 * pad - K) // stride + 1
    cols = backend.kernels.im2col(xp, K, stride, ho, wo)
    wmat = weight.reshape(F, -1)
    out = cols @ wmat.T
    out += bias
    out = np.ascontiguousarray(out.reshape(B, ho, wo, F).transpose(0, 3, 1, 2))
    return out, (x.shape, xp.shape, cols, weight, stride, pad)


def conv2d_backward(dout, cache, need_dx: bool = True):
    x_shape, xp_shape, cols, weight, stride, pad = cache
    B, C, H, W = x_shape
    F, _, K, _ = weight.shape
    ho, wo = dout.shape[2:]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    db = dmat.sum(axis=0)
    dw = (dmat.T @ cols).reshape(weight.shape)
    dx = None
    if need_dx:
        dcols = np.ascontiguousarray(dmat @ weight.reshape(F, -1))
        dxp = backend.kernels.col2im(dcols, B, C, xp_shape[2], xp_shape[3], K, stride, ho, wo)
        dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        dx = np.ascontiguousarray(dx)
    return dx, dw, db


def _channel_sum(x):
    return np.einsum("bcn->c", x.reshape(x.shape[0], x.shape[1], -1))


def _channel_dot(x, y):
    b, c = x.shape[:2]
    return np.einsum("bcn,bcn->c", x.reshape(b, c, -1), y.reshape(b, c, -1))


def batchnorm_forward(x, state: BatchNormState, training: bool):
    """Per-channel normalisation over (batch, height, width).

    Training mode uses the (biased) batch variance and, if
    ``state.update_running_stats``, blends the batch statistics into the
    running ones with weight ``state.momentum``.
    """
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise ValueError("batch norm in training mode needs at least 2 values per channel")
        mean = _channel_sum(x) / n
        xhat = x - mean.reshape(1, -1, 1, 1)
        var = _channel_dot(xhat, xhat) / n
        if state.update_running_stats:
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mean
            state.running_var[...] = (1 - m) * state.running_var + m * var
    else:
        var = state.running_var
        xhat = x - state.running_mean.reshape(1, -1, 1, 1)
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat *= inv_std.reshape(1, -1, 1, 1)
    out = xhat * state.gamma.value.reshape(1, -1, 1, 1)
    out += state.beta.value.reshape(1, -1, 1, 1)
    return out, (xhat, inv_std, state, training)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, state, training = cache
    dgamma = _channel_dot(dout, xhat)
    dbeta = _channel_sum(dout)
    scale = (state.gamma.value * inv_std).reshape(1, -1, 1, 1)
    if not training:
        return dout * scale, dgamma, dbeta
    n = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = xhat * dgamma.reshape(1, -1, 1, 1)
    dx += dbeta.reshape(1, -1, 1, 1)
    np.subtract(n * dout, dx, out=dx)
    dx *= scale / n
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return np.multiply(x, mask, dtype=x.dtype), mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool2d_forward(x):
    """2x2 max pooling, stride 2; ties go to the first element in row-major order."""
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ValueError(f"maxpool2d needs a 4D input with spatial size >= 2, got {x.shape}")
    out, idx = backend.kernels.maxpool2x2_forward(np.ascontiguousarray(x))
    return out, (idx, x.shape)


def maxpool2d_backward(dout, cache):
    idx, shape = cache
    return backend.kernels.maxpool2x2_backward(np.ascontiguousarray(dout), idx, shape[2], shape[3])


def global_avgpool_forward(x):
    if x.ndim != 4:
        raise ValueError(f"global_avgpool expects a 4D input, got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dout, shape):
    h, w = shape[2], shape[3]
    return np.broadcast_to((dout / (h * w))[:, :, None, None], shape).copy()


def linear_forward(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(dout, cache):
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient wrt the logits."""
    labels = np.asarray(labels)
    B, n_classes = logits.shape
    if labels.shape != (B,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"labels must be {B} integers in [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1
    grad /= B
    return loss, grad.astype(logits.dtype, copy=False)
