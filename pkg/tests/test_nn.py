import numpy as np
import pytest

from gradcases import LOSS_CASES, OPERATOR_CASES, TOLERANCE, check_case
from rangeseg.errors import BadMagicError, ConfigError, ShapeMismatchError, SizeMismatchError
from rangeseg.nn import SGD, LayerKind, LayerSpec, no_grad
from rangeseg.nn import tensor as F
from rangeseg.nn.checkpoint import load_checkpoint, save_checkpoint, state_from_bytes, state_to_bytes
from rangeseg.nn.layers import BatchNorm2d, Conv2d, ConvBNReLU, ConvTranspose2d
from rangeseg.nn.tensor import Tensor


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_identity_1x1_conv():
    x = t64(np.random.default_rng(0).standard_normal((3, 5, 7)))
    w = t64(np.eye(3)[:, :, None, None])
    out = F.conv2d(x, w, t64(np.zeros(3)))
    assert np.array_equal(out.data, x.data)


def test_box_filter_counts():
    out = F.conv2d(t64(np.ones((1, 3, 3))), t64(np.ones((1, 1, 3, 3))), None, (1, 1), (1, 1))
    assert out.data[0, 1, 1] == 9
    assert out.data[0, 0, 0] == out.data[0, 2, 2] == 4
    assert out.data[0, 0, 1] == 6


def test_conv_gradients_on_4x6x8():
    from oracles import numeric_grad, rel_error
    rng = np.random.default_rng(1)
    x = t64(rng.standard_normal((4, 6, 8)), True)
    w = t64(rng.standard_normal((3, 4, 3, 3)), True)
    b = t64(rng.standard_normal(3), True)
    proj = rng.standard_normal((3, 3, 8))

    def loss():
        return F.weighted_sum(F.conv2d(x, w, b, (2, 1), (1, 1)), proj)

    loss().backward()
    for leaf in (x, w, b):
        num = numeric_grad(lambda: float(loss().data), leaf.data)
        assert rel_error(leaf.grad, num) <= TOLERANCE


def test_conv_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        F.conv2d(t64(np.ones((2, 4, 4))), t64(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeMismatchError):
        F.conv2d(t64(np.ones((1, 2, 2))), t64(np.ones((1, 1, 3, 3))))


def test_tconv_identity_and_shape():
    x = t64(np.random.default_rng(2).standard_normal((2, 8, 5)))
    assert np.array_equal(F.conv_transpose2d(x, t64(np.eye(2)[:, :, None, None])).data, x.data)
    w = t64(np.ones((2, 3, 2, 3)))
    assert F.conv_transpose2d(x, w, None, (2, 1), (0, 1)).shape == (3, 16, 5)


def test_tconv_is_adjoint_of_conv():
    rng = np.random.default_rng(3)
    for _ in range(20):
        Ci, Co = rng.integers(1, 4, 2)
        kh, kw = rng.integers(1, 4, 2)
        sh = int(rng.integers(1, 3))
        ph, pw = int(rng.integers(0, kh)), int(rng.integers(0, kw))
        H, W = int(rng.integers(kh, 9)), int(rng.integers(kw, 9))
        Ho = (H + 2 * ph - kh) // sh + 1
        Wo = W + 2 * pw - kw + 1
        if Ho < 1 or Wo < 1 or (Ho - 1) * sh + kh - 2 * ph != H:
            continue  # conv is only the exact adjoint when the shapes round-trip
        w = rng.standard_normal((Co, Ci, kh, kw))
        x = rng.standard_normal((Ci, H, W))
        y = rng.standard_normal((Co, Ho, Wo))
        cx = F.conv2d(t64(x), t64(w), None, (sh, 1), (ph, pw)).data
        ty = F.conv_transpose2d(t64(y), t64(w), None, (sh, 1), (ph, pw)).data
        assert abs(np.vdot(cx, y) - np.vdot(x, ty)) <= 1e-9 * max(1.0, abs(np.vdot(cx, y)))


def test_batchnorm_constant_channel_gives_beta():
    x = t64(np.full((2, 4, 5), 3.25))
    out = F.batch_norm(x, t64([1.5, 2.0]), t64([0.25, -1.0]), np.zeros(2), np.ones(2), True)
    assert np.allclose(out.data[0], 0.25) and np.allclose(out.data[1], -1.0)


def test_batchnorm_standardizes():
    x = t64(np.random.default_rng(4).standard_normal((3, 8, 9)) * 4 + 2)
    out = F.batch_norm(x, t64(np.ones(3)), t64(np.zeros(3)), np.zeros(3), np.ones(3), True).data
    assert np.abs(out.mean(axis=(1, 2))).max() < 1e-12
    assert np.abs(out.var(axis=(1, 2)) - 1).max() < 1e-6 * 16  # eps shrinks var by ~eps/var


def test_batchnorm_running_stats_update():
    rm, rv = np.zeros(1), np.ones(1)
    F.batch_norm(t64(np.arange(4.0).reshape(1, 2, 2)), t64([1.0]), t64([0.0]), rm, rv, True)
    assert rm[0] == pytest.approx(0.1 * 1.5)
    assert rv[0] == pytest.approx(0.9 + 0.1 * 1.25)


def test_softmax_uniform():
    assert np.allclose(F.softmax(t64(np.zeros((4, 2, 3)))).data, 0.25)


def test_concat_height_16_plus_48():
    a, b = t64(np.zeros((4, 16, 8))), t64(np.ones((4, 48, 8)))
    out = F.concat([a, b], axis=1)
    assert out.shape == (4, 64, 8)
    assert not out.data[:, :16].any() and out.data[:, 16:].all()
    with pytest.raises(ShapeMismatchError):
        F.concat([a, t64(np.ones((3, 48, 8)))], axis=1)


def test_relu_products_vanish():
    x = np.random.default_rng(5).standard_normal((3, 4, 5))
    assert not (F.relu(t64(-x)).data * F.relu(t64(x)).data).any()


def test_add_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        F.add(t64(np.ones((1, 2, 2))), t64(np.ones((1, 2, 3))))


def test_horizontal_stride_rejected():
    with pytest.raises(ConfigError):
        LayerSpec(LayerKind.CONV, (3, 3), (1, 2))
    with pytest.raises(ConfigError):
        Conv2d(2, 2, (3, 3), (2, 2))
    with pytest.raises(ConfigError):
        LayerSpec(LayerKind.TCONV, (2, 3), (3, 1))
    LayerSpec(LayerKind.CONV, (3, 3), (2, 1))


@pytest.mark.parametrize("name", sorted(OPERATOR_CASES))
def test_operator_gradients(name):
    for seed in range(5):
        assert check_case(OPERATOR_CASES[name], seed) <= TOLERANCE


@pytest.mark.parametrize("name", sorted(LOSS_CASES))
def test_loss_gradients(name):
    for seed in range(3):
        assert check_case(LOSS_CASES[name], seed) <= TOLERANCE


def test_determinism_same_seed():
    def run():
        rng = np.random.default_rng(9)
        layer = ConvBNReLU(3, 4, rng=rng, dtype=np.float64)
        x = t64(np.random.default_rng(1).standard_normal((3, 6, 7)))
        out = layer(x)
        F.weighted_sum(out, np.ones(out.shape)).backward()
        return out.data, layer.conv.weight.grad
    (a, ga), (b, gb) = run(), run()
    assert np.array_equal(a, b) and np.array_equal(ga, gb)


def test_no_grad_skips_graph():
    w = t64(np.ones((1, 1, 1, 1)), True)
    with no_grad():
        out = F.conv2d(t64(np.ones((1, 2, 2))), w)
    assert out._backward is None


def test_sgd_momentum_step():
    p = t64([1.0, -2.0], True)
    p.grad = np.array([0.5, 0.5])
    opt = SGD([p], lr=0.1, momentum=0.9)
    opt.step()
    assert np.allclose(p.data, [0.95, -2.05])
    opt.step()
    assert np.allclose(p.data, [0.95 - 0.1 * (0.9 * 0.5 + 0.5), -2.05 - 0.1 * 0.95])


def test_checkpoint_round_trip(tmp_path):
    class Tiny(ConvBNReLU):
        pass
    a = Tiny(2, 3, rng=np.random.default_rng(0))
    a.bn.running_mean[:] = [1, 2, 3]
    save_checkpoint(tmp_path / "w.rswt", a)
    payload = (tmp_path / "w.rswt").read_bytes()
    assert payload[:4] == b"RSWT"
    b = Tiny(2, 3, rng=np.random.default_rng(5))
    load_checkpoint(tmp_path / "w.rswt", b)
    assert np.array_equal(b.conv.weight.data, a.conv.weight.data)
    assert np.array_equal(b.bn.running_mean, [1, 2, 3])
    assert state_to_bytes(state_from_bytes(payload)) == payload


def test_checkpoint_errors(tmp_path):
    payload = state_to_bytes(ConvTranspose2d(2, 2).state())
    with pytest.raises(BadMagicError):
        state_from_bytes(b"WXYZ" + payload[4:])
    with pytest.raises(SizeMismatchError):
        state_from_bytes(payload[:-2])
    (tmp_path / "w.rswt").write_bytes(payload)
    with pytest.raises(Exception):
        load_checkpoint(tmp_path / "w.rswt", BatchNorm2d(2))
