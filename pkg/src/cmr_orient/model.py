"""The orientation classifier and its checkpoint format.

Three conv -> batch norm -> ReLU -> 2x2 max-pool blocks, global average
pooling, then fc1 -> ReLU -> fc2 with one logit per orientation class.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CheckpointError, ShapeMismatchError, VersionMismatchError
from .nn import layers as L

CHECKPOINT_MAGIC = b"ORNT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OrientNetConfig:
    input_size: int = 64
    channels: tuple = (16, 32, 64)
    kernel: int = 3
    hidden_units: int = 32
    num_classes: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 3:
            raise ValueError("exactly three conv blocks are supported")
        if self.input_size < 8 or self.input_size % 8:
            raise ValueError(f"input_size must be a positive multiple of 8, got {self.input_size}")
        if self.num_classes != 8:
            raise ValueError("num_classes must be 8")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and positive")

    def tensor_shapes(self) -> dict:
        """Name -> shape for every stored tensor, in checkpoint order."""
        shapes = {}
        c_in = 3
        for i, c in enumerate(self.channels, start=1):
            shapes[f"block{i}.conv.weight"] = (c, c_in, self.kernel, self.kernel)
            shapes[f"block{i}.conv.bias"] = (c,)
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"block{i}.bn.{name}"] = (c,)
            c_in = c
        shapes["fc1.weight"] = (self.hidden_units, c_in)
        shapes["fc1.bias"] = (self.hidden_units,)
        shapes["fc2.weight"] = (self.num_classes, self.hidden_units)
        shapes["fc2.bias"] = (self.num_classes,)
        return shapes


@dataclass
class ModelParams:
    config: OrientNetConfig
    conv_w: list = field(default_factory=list)
    conv_b: list = field(default_factory=list)
    bn: list = field(default_factory=list)
    fc1_w: L.Parameter = None
    fc1_b: L.Parameter = None
    fc2_w: L.Parameter = None
    fc2_b: L.Parameter = None

    def feature_parameters(self) -> list:
        """Conv weights/biases and batch-norm affine terms (the feature extractor)."""
        out = []
        for w, b, bn in zip(self.conv_w, self.conv_b, self.bn):
            out += [w, b, bn.gamma, bn.beta]
        return out

    def head_parameters(self) -> list:
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]

    def parameters(self) -> list:
        return self.feature_parameters() + self.head_parameters()

    def named_tensors(self) -> dict:
        """Name -> array (live references) in checkpoint order, running stats included."""
        out = {}
        for i, (w, b, bn) in enumerate(zip(self.conv_w, self.conv_b, self.bn), start=1):
            out[f"block{i}.conv.weight"] = w.value
            out[f"block{i}.conv.bias"] = b.value
            out[f"block{i}.bn.gamma"] = bn.gamma.value
            out[f"block{i}.bn.beta"] = bn.beta.value
            out[f"block{i}.bn.running_mean"] = bn.running_mean
            out[f"block{i}.bn.running_var"] = bn.running_var
        out["fc1.weight"] = self.fc1_w.value
        out["fc1.bias"] = self.fc1_b.value
        out["fc2.weight"] = self.fc2_w.value
        out["fc2.bias"] = self.fc2_b.value
        return out

    def set_features_frozen(self, frozen: bool):
        for p in self.feature_parameters():
            p.frozen = frozen
        for bn in self.bn:
            bn.update_running_stats = not frozen

    @property
    def features_frozen(self) -> bool:
        return all(p.frozen for p in self.feature_parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        return from_tensors(self.config, {k: v.copy() for k, v in self.named_tensors().items()})

    def astype(self, dtype) -> "ModelParams":
        return from_tensors(self.config, {k: v.astype(dtype) for k, v in self.named_tensors().items()}, dtype=dtype)


def count_parameters(params: ModelParams) -> int:
    return sum(p.value.size for p in params.parameters())


def from_tensors(config: OrientNetConfig, tensors: dict, dtype=np.float32) -> ModelParams:
    expected = config.tensor_shapes()
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeMismatchError(f"missing tensor {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise ShapeMismatchError(f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {shape}")
    extra = set(tensors) - set(expected)
    if extra:
        raise ShapeMismatchError(f"unexpected tensors {sorted(extra)}")

    def t(name):
        return np.array(tensors[name], dtype=dtype)

    params = ModelParams(config)
    for i, c in enumerate(config.channels, start=1):
        params.conv_w.append(L.Parameter(t(f"block{i}.conv.weight")))
        params.conv_b.append(L.Parameter(t(f"block{i}.conv.bias")))
        bn = L.BatchNormState(c, dtype=dtype)
        bn.gamma = L.Parameter(t(f"block{i}.bn.gamma"))
        bn.beta = L.Parameter(t(f"block{i}.bn.beta"))
        bn.running_mean = t(f"block{i}.bn.running_mean")
        bn.running_var = t(f"block{i}.bn.running_var")
        params.bn.append(bn)
    params.fc1_w = L.Parameter(t("fc1.weight"))
    params.fc1_b = L.Parameter(t("fc1.bias"))
    params.fc2_w = L.Parameter(t("fc2.weight"))
    params.fc2_b = L.Parameter(t("fc2.bias"))
    return params


def init_params(config: OrientNetConfig, rng: np.random.Generator) -> ModelParams:
    """He-style uniform init: weights ~ U(-b, b) with b = sqrt(6 / fan_in), biases zero."""
    tensors = {}
    for name, shape in config.tensor_shapes().items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif kind in ("gamma", "running_var"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return from_tensors(config, tensors)


def forward(params: ModelParams, batch: np.ndarray, training: bool = False, return_caches: bool = False):
    """Logits ``(B, 8)`` for a ``(B, 3, S, S)`` batch."""
    cfg = params.config
    if batch.ndim != 4 or batch.shape[1:] != (3, cfg.input_size, cfg.input_size):
        raise ValueError(f"expected a (B, 3, {cfg.input_size}, {cfg.input_size}) batch, got {batch.shape}")
    pad = cfg.kernel // 2
    caches = []
    x = batch
    for w, b, bn in zip(params.conv_w, params.conv_b, params.bn):
        x, c_conv = L.conv2d_forward(x, w.value, b.value, stride=1, pad=pad)
        x, c_bn = L.batchnorm_forward(x, bn, training)
        x, c_relu = L.relu_forward(x)
        x, c_pool = L.maxpool2d_forward(x)
        caches.append((c_conv, c_bn, c_relu, c_pool))
    x, c_gap = L.global_avgpool_forward(x)
    h, c_fc1 = L.linear_forward(x, params.fc1_w.value, params.fc1_b.value)
    h, c_relu = L.relu_forward(h)
    logits, c_fc2 = L.linear_forward(h, params.fc2_w.value, params.fc2_b.value)
    if return_caches:
        return logits, (caches, c_gap, c_fc1, c_relu, c_fc2)
    return logits


def backward(params: ModelParams, dlogits: np.ndarray, caches) -> None:
    """Accumulate gradients into every parameter; stops early when the features are frozen."""
    conv_caches, c_gap, c_fc1, c_relu, c_fc2 = caches
    dh, dw, db = L.linear_backward(dlogits, c_fc2)
    params.fc2_w.grad += dw
    params.fc2_b.grad += db
    dh = L.relu_backward(dh, c_relu)
    dx, dw, db = L.linear_backward(dh, c_fc1)
    params.fc1_w.grad += dw
    params.fc1_b.grad += db
    if params.features_frozen:
        return
    dx = L.global_avgpool_backward(dx, c_gap)
    for i in reversed(range(len(conv_caches))):
        c_conv, c_bn, c_relu, c_pool = conv_caches[i]
        dx = L.maxpool2d_backward(dx, c_pool)
        dx = L.relu_backward(dx, c_relu)
        dx, dgamma, dbeta = L.batchnorm_backward(dx, c_bn)
        params.bn[i].gamma.grad += dgamma
        params.bn[i].beta.grad += dbeta
        dx, dw, db = L.conv2d_backward(dx, c_conv, need_dx=i > 0)
        params.conv_w[i].grad += dw
        params.conv_b[i].grad += db


def loss_and_grad(params: ModelParams, batch: np.ndarray, labels: np.ndarray, training: bool = True):
    """Zero the grads, run forward + backward; returns ``(loss, logits)``."""
    params.zero_grad()
    logits, caches = forward(params, batch, training=training, return_caches=True)
    loss, dlogits = L.softmax_cross_entropy(logits, labels)
    backward(params, dlogits, caches)
    return loss, logits


def refresh_bn_stats(params: ModelParams, inputs: np.ndarray, order: np.ndarray, batch_size: int = 32) -> None:
    """Re-estimate batch-norm running statistics for the current weights.

    Training-mode forward passes without gradients over ``inputs[order]`` in
    batches; each batch applies the usual momentum update, so after a full
    pass the running statistics describe these weights rather than a trail
    of earlier optimizer steps. Does nothing while the features are frozen.
    """
    if params.features_frozen:
        return
    for i in range(0, len(order), batch_size):
        idx = order[i : i + batch_size]
        if len(idx) >= 2:
            forward(params, inputs[idx], training=True)


def predict_proba(params: ModelParams, batch: np.ndarray, batch_size: int = 128) -> np.ndarray:
    out = [L.softmax(forward(params, batch[i : i + batch_size], training=False)) for i in range(0, len(batch), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.num_classes), dtype=np.float32)


# -- checkpoints --------------------------------------------------------------


def checkpoint_bytes(params: ModelParams) -> bytes:
    cfg = params.config
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<7I", cfg.input_size, *cfg.channels, cfg.kernel, cfg.hidden_units, cfg.num_classes))
    tensors = params.named_tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config: OrientNetConfig | None = None) -> ModelParams:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path} is not an orientation checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    input_size, c1, c2, c3, kernel, hidden, n_classes = r.unpack("<7I")
    try:
        config = OrientNetConfig(input_size, (c1, c2, c3), kernel, hidden, n_classes)
    except ValueError as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after the last tensor")
    if expected_config is not None:
        shapes = expected_config.tensor_shapes()
        for name, arr in tensors.items():
            if name in shapes and tuple(arr.shape) != shapes[name]:
                raise ShapeMismatchError(f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shapes[name]}")
        if config != expected_config:
            raise ShapeMismatchError(f"checkpoint config {asdict(config)} differs from expected {asdict(expected_config)}")
    return from_tensors(config, tensors)
