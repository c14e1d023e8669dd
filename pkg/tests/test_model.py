import struct

import numpy as np
import pytest

from cmr_orient import model as M
from cmr_orient.errors import BadMagicError, CheckpointError, ShapeMismatchError, VersionMismatchError
from cmr_orient.nn import layers as L

from gradcheck import numerical_grad, rel_error

SMALL = M.OrientNetConfig(input_size=8, channels=(3, 4, 5), kernel=3, hidden_units=6)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_default_parameter_count():
    # conv: F*C*K*K + F, bn: 2*F, fc: out*in + out
    expected = (16 * 3 * 9 + 16 + 2 * 16) + (32 * 16 * 9 + 32 + 2 * 32) + (64 * 32 * 9 + 64 + 2 * 64)
    expected += 32 * 64 + 32 + 8 * 32 + 8
    assert expected == 26152
    assert M.count_parameters(M.init_params(M.OrientNetConfig(), rng())) == 26152


def test_init_contract():
    a = M.init_params(M.OrientNetConfig(), rng(5))
    b = M.init_params(M.OrientNetConfig(), rng(5))
    for (name, x), y in zip(a.named_tensors().items(), b.named_tensors().values()):
        assert x.tobytes() == y.tobytes(), name
    for i, bn in enumerate(a.bn):
        assert np.all(bn.gamma.value == 1) and not bn.beta.value.any()
        assert not bn.running_mean.any() and np.all(bn.running_var == 1)
        assert not a.conv_b[i].value.any()
        w = a.conv_w[i].value
        bound = np.sqrt(6 / np.prod(w.shape[1:]))
        assert np.abs(w).max() <= bound and np.abs(w).max() > 0.8 * bound


def test_config_validation():
    with pytest.raises(ValueError):
        M.OrientNetConfig(input_size=60)
    with pytest.raises(ValueError):
        M.OrientNetConfig(num_classes=4)


def test_forward_shapes_and_determinism():
    p = M.init_params(SMALL, rng(1))
    x = rng(2).random((3, 3, 8, 8)).astype(np.float32)
    out = M.forward(p, x)
    assert out.shape == (3, 8)
    assert M.forward(p, x).tobytes() == out.tobytes()
    twin = np.concatenate([x[:1], x[:1]])
    logits = M.forward(p, twin, training=False)
    assert np.array_equal(logits[0], logits[1])
    with pytest.raises(ValueError):
        M.forward(p, np.zeros((1, 3, 16, 16), np.float32))


def test_zero_input_gives_equal_logits_at_init():
    p = M.init_params(M.OrientNetConfig(), rng(3))
    logits = M.forward(p, np.zeros((2, 3, 64, 64), np.float32))
    assert np.all(logits == logits[:, :1])


def test_logits_finite_on_unit_inputs():
    p = M.init_params(M.OrientNetConfig(), rng(4))
    x = np.concatenate([np.zeros((1, 3, 64, 64)), np.ones((1, 3, 64, 64)), rng(4).random((2, 3, 64, 64))]).astype(np.float32)
    assert np.isfinite(M.forward(p, x)).all()


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradcheck(seed):
    r = rng(seed)
    p = M.init_params(SMALL, r).astype(np.float64)
    for bn in p.bn:
        bn.update_running_stats = False
        bn.gamma.value[:] = r.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta.value[:] = r.normal(size=bn.beta.shape) * 0.1
    x = r.random((4, 3, 8, 8))
    y = r.integers(0, 8, 4)
    M.loss_and_grad(p, x, y, training=True)
    f = lambda: L.softmax_cross_entropy(M.forward(p, x, training=True), y)[0]
    for param in p.parameters():
        flat = [np.unravel_index(i, param.shape) for i in r.choice(param.value.size, min(6, param.value.size), replace=False)]
        # small step: with 3 pooling stages a 1e-3 nudge can cross a max/ReLU kink
        num = numerical_grad(f, param.value, h=1e-5, indices=flat)
        ana = np.array([param.grad[i] for i in flat])
        # conv biases feed a training-mode batch norm, so their true gradient
        # is exactly zero; the floor keeps roundoff there from reading as error
        assert rel_error(ana, np.array([num[i] for i in flat]), floor=1e-6) < 1e-3
    for b in p.conv_b:
        assert np.abs(b.grad).max() < 1e-12


def test_frozen_features_skip_conv_gradients():
    p = M.init_params(SMALL, rng(6))
    p.set_features_frozen(True)
    M.loss_and_grad(p, rng(6).random((2, 3, 8, 8)).astype(np.float32), np.array([1, 2]))
    assert not any(q.grad.any() for q in p.feature_parameters())
    assert p.fc1_w.grad.any()
    assert not any(bn.update_running_stats for bn in p.bn)


def test_checkpoint_round_trip(tmp_path):
    p = M.init_params(M.OrientNetConfig(), rng(7))
    for bn in p.bn:
        bn.running_mean[:] = rng(8).normal(size=bn.running_mean.shape)
        bn.running_var[:] = rng(9).uniform(0.5, 2, size=bn.running_var.shape)
    path = tmp_path / "m.ornt"
    M.save_checkpoint(p, path)
    q = M.load_checkpoint(path)
    assert q.config == p.config
    for (name, a), b in zip(p.named_tensors().items(), q.named_tensors().values()):
        assert a.tobytes() == b.tobytes(), name
    assert M.checkpoint_bytes(q) == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    p = M.init_params(SMALL, rng(0))
    raw = M.checkpoint_bytes(p)
    assert raw[:4] == b"ORNT"
    assert struct.unpack_from("<I", raw, 4) == (1,)
    assert struct.unpack_from("<7I", raw, 8) == (8, 3, 4, 5, 3, 6, 8)
    assert struct.unpack_from("<I", raw, 36) == (22,)
    (n,) = struct.unpack_from("<H", raw, 40)
    assert raw[42 : 42 + n] == b"block1.conv.weight"
    assert raw[42 + n] == 4
    assert struct.unpack_from("<4I", raw, 43 + n) == (3, 3, 3, 3)
    payload = np.frombuffer(raw, "<f4", count=81, offset=59 + n)
    assert np.array_equal(payload.reshape(3, 3, 3, 3), p.conv_w[0].value)


def test_checkpoint_errors(tmp_path):
    p = M.init_params(SMALL, rng(0))
    raw = M.checkpoint_bytes(p)
    path = tmp_path / "bad.ornt"
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        M.load_checkpoint(path)
    path.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(VersionMismatchError):
        M.load_checkpoint(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        M.load_checkpoint(path)
    path.write_bytes(raw)
    with pytest.raises(ShapeMismatchError, match="block1.conv.weight"):
        M.load_checkpoint(path, expected_config=M.OrientNetConfig())
    # config block disagreeing with stored tensors
    path.write_bytes(raw[:8] + struct.pack("<7I", 8, 3, 4, 6, 3, 6, 8) + raw[36:])
    with pytest.raises(ShapeMismatchError, match="block3"):
        M.load_checkpoint(path)


def test_refresh_bn_stats_tracks_current_weights():
    p = M.init_params(SMALL, rng(10))
    x = (rng(11).random((64, 3, 8, 8)) * 3 + 1).astype(np.float32)
    learnable = {n: t.copy() for n, t in p.named_tensors().items() if "running" not in n}
    M.refresh_bn_stats(p, x, np.arange(64), batch_size=8)
    for n, t in p.named_tensors().items():
        if "running" not in n:
            assert t.tobytes() == learnable[n].tobytes(), n
    # block 1 sees the raw inputs, so its running mean is the momentum
    # average of the 8 per-batch channel means of the first conv
    conv1 = L.conv2d_forward(x.astype(np.float64), p.conv_w[0].value.astype(np.float64), p.conv_b[0].value, 1, 1)[0]
    expected = np.zeros(3)
    for k in range(8):
        expected = 0.9 * expected + 0.1 * conv1[8 * k : 8 * k + 8].mean(axis=(0, 2, 3))
    assert np.allclose(p.bn[0].running_mean, expected, rtol=1e-5)


def test_refresh_bn_stats_noop_when_frozen():
    p = M.init_params(SMALL, rng(12))
    p.set_features_frozen(True)
    M.refresh_bn_stats(p, rng(13).random((16, 3, 8, 8)).astype(np.float32), np.arange(16), batch_size=8)
    assert all(not bn.running_mean.any() and np.all(bn.running_var == 1) for bn in p.bn)
