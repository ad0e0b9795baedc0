"""Tests for the from-scratch network kernel, optimizer and weight files."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import correlate2d

from imnet.nn import functional as F
from imnet.nn.gradcheck import grad_check
from imnet.nn.io import WeightFileError, load_weights, save_weights
from imnet.nn.network import (
    MAXPOOL,
    LayerSpec,
    Network,
    ad_layers,
    conv,
    dense,
    pack_complex,
    sd_layers,
    unpack_complex,
)
from imnet.nn.optim import Adam, adam_step


def numeric_grad(fn, x, eps=1e-6):
    """Central differences of a scalar function of ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        plus = fn(x)
        x[i] = orig - eps
        minus = fn(x)
        x[i] = orig
        g[i] = (plus - minus) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-7))


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 4, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(F.conv2d(x, k, np.zeros(1)), x)

    def test_ones_kernel_on_constant_input(self):
        out = F.conv2d(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3)), np.zeros(1))[0, 0]
        assert out[2, 2] == 9 and out[0, 0] == 4 and out[0, 2] == 6
        assert out.shape == (5, 5)

    @pytest.mark.parametrize("shape", [(2, 3, 4, 4), (1, 2, 1, 4), (3, 2, 5, 1), (1, 1, 1, 1)])
    def test_matches_scipy_correlation(self, shape):
        rng = np.random.default_rng(1)
        x = rng.normal(size=shape)
        k = rng.normal(size=(4, shape[1], 3, 3))
        b = rng.normal(size=4)
        out = F.conv2d(x, k, b)
        for n in range(shape[0]):
            for o in range(4):
                ref = sum(correlate2d(x[n, c], k[o, c], mode="same") for c in range(shape[1])) + b[o]
                np.testing.assert_allclose(out[n, o], ref, atol=1e-12)

    @pytest.mark.parametrize("shape", [(2, 2, 4, 4), (2, 3, 1, 4)])
    def test_backward_finite_differences(self, shape):
        rng = np.random.default_rng(2)
        x = rng.normal(size=shape)
        k = rng.normal(size=(3, shape[1], 3, 3))
        b = rng.normal(size=3)
        w = rng.normal(size=(shape[0], 3) + shape[2:])
        dx, dk, db = F.conv2d_backward(w, x, k)
        assert rel_err(dx, numeric_grad(lambda v: np.sum(w * F.conv2d(v, k, b)), x)) < 1e-6
        dk_num = numeric_grad(lambda v: np.sum(w * F.conv2d(x, v, b)), k)
        # taps that only ever see padding have zero gradient in both
        assert rel_err(dk, dk_num) < 1e-6
        assert rel_err(db, numeric_grad(lambda v: np.sum(w * F.conv2d(x, k, v)), b)) < 1e-6

    def test_shape_errors(self):
        with pytest.raises(ValueError, match="input channels"):
            F.conv2d(np.zeros((1, 2, 3, 3)), np.zeros((1, 3, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="4-d"):
            F.conv2d(np.zeros((2, 3, 3)), np.zeros((1, 2, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="bias"):
            F.conv2d(np.zeros((1, 1, 3, 3)), np.zeros((2, 1, 3, 3)), np.zeros(1))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3))
    def test_same_padding_preserves_shape(self, h, w, c):
        out = F.conv2d(np.ones((2, c, h, w)), np.ones((5, c, 3, 3)), np.zeros(5))
        assert out.shape == (2, 5, h, w)


class TestMaxPool:
    def test_blockwise_maxima(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        out, _ = F.maxpool2(x)
        np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])

    def test_size_one_axis_passes_through(self):
        out, _ = F.maxpool2(np.array([[[[1.0, 3.0, 2.0, 0.0]]]]))
        np.testing.assert_array_equal(out, [[[[3.0, 2.0]]]])

    def test_ties_route_to_first(self):
        x = np.ones((1, 1, 2, 2))
        out, arg = F.maxpool2(x)
        g = F.maxpool2_backward(np.ones_like(out), x.shape, arg)
        np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])

    def test_backward_finite_differences(self):
        x = np.random.default_rng(3).normal(size=(2, 3, 4, 5))
        out, arg = F.maxpool2(x)
        w = np.random.default_rng(4).normal(size=out.shape)
        g = F.maxpool2_backward(w, x.shape, arg)
        assert rel_err(g, numeric_grad(lambda v: np.sum(w * F.maxpool2(v)[0]), x)) < 1e-6


class TestDenseAndActivations:
    def test_dense_identity_and_zero(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(F.dense(x, np.eye(4), np.zeros(4)), x)
        np.testing.assert_array_equal(F.dense(x, np.zeros((4, 2)), np.array([1.0, -2.0])), [[1, -2]] * 3)

    def test_dense_backward(self):
        rng = np.random.default_rng(1)
        x, wt, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        w = rng.normal(size=(3, 2))
        dx, dw, db = F.dense_backward(w, x, wt)
        assert rel_err(dx, numeric_grad(lambda v: np.sum(w * F.dense(v, wt, b)), x)) < 1e-6
        assert rel_err(dw, numeric_grad(lambda v: np.sum(w * F.dense(x, v, b)), wt)) < 1e-6
        assert rel_err(db, numeric_grad(lambda v: np.sum(w * F.dense(x, wt, v)), b)) < 1e-6

    def test_dense_shape_mismatch(self):
        with pytest.raises(ValueError):
            F.dense(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros(1))

    def test_relu(self):
        np.testing.assert_array_equal(F.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
        np.testing.assert_array_equal(F.relu_backward(np.ones(3), np.array([-1.0, 0.0, 2.0])), [0, 0, 1])

    def test_sigmoid_values(self):
        assert F.sigmoid(np.array([0.0]))[0] == 0.5
        x = np.linspace(-800, 800, 101)
        s = F.sigmoid(x)
        assert np.all(np.isfinite(s)) and np.all(np.diff(s) >= 0)
        np.testing.assert_allclose(s + F.sigmoid(-x), 1.0, atol=1e-15)

    def test_sigmoid_backward(self):
        x = np.random.default_rng(2).normal(size=10)
        g = F.sigmoid_backward(np.ones(10), F.sigmoid(x))
        assert rel_err(g, numeric_grad(lambda v: np.sum(F.sigmoid(v)), x)) < 1e-6

    @given(arrays(float, 8, elements=st.floats(-30, 30)))
    def test_sigmoid_range(self, x):
        s = F.sigmoid(x)
        assert np.all((s >= 0) & (s <= 1))


class TestLosses:
    def test_bce_half_is_ln2(self):
        loss, _ = F.bce_loss(np.full(4, 0.5), np.array([0, 1, 1, 0]))
        assert abs(loss - math.log(2)) < 1e-12

    def test_bce_exact_prediction_is_clamped(self):
        loss, grad = F.bce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert 0 <= loss < 1e-11 and np.all(np.isfinite(grad))

    def test_bce_gradient(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, size=(3, 4))
        y = rng.integers(0, 2, size=(3, 4)).astype(float)
        _, g = F.bce_loss(p, y)
        assert rel_err(g, numeric_grad(lambda v: F.bce_loss(v, y)[0], p)) < 1e-6

    def test_mse_values(self):
        x = np.random.default_rng(1).normal(size=(2, 3))
        assert F.mse_loss(x, x)[0] == 0.0
        assert F.mse_loss(np.ones((1, 5)), np.zeros((1, 5)))[0] == 1.0

    def test_mse_gradient(self):
        rng = np.random.default_rng(2)
        p, t = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        _, g = F.mse_loss(p, t)
        assert rel_err(g, numeric_grad(lambda v: F.mse_loss(v, t)[0], p)) < 1e-6

    @given(arrays(float, 6, elements=st.floats(0, 1)), arrays(float, 6, elements=st.sampled_from([0.0, 1.0])))
    def test_losses_nonnegative(self, p, y):
        assert F.bce_loss(p, y)[0] >= 0
        assert F.mse_loss(p, y)[0] >= 0


class TestAdam:
    def test_zero_gradient_keeps_weights(self):
        params = {"w": np.array([1.0, -2.0])}
        Adam().step(params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_by_hand(self):
        g = np.array([0.3, -2.0, 1e-3])
        params = {"w": np.zeros(3)}
        adam_step(params, {"w": g}, Adam(lr=0.01))
        m_hat, v_hat = g, g * g  # bias correction undoes the first-step shrinkage
        np.testing.assert_allclose(params["w"], -0.01 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=1e-12)

    def test_constant_gradient_step_tends_to_lr(self):
        opt = Adam(lr=1e-3)
        params = {"w": np.zeros(1)}
        prev = 0.0
        for _ in range(2000):
            opt.step(params, {"w": np.array([5.0])})
            step, prev = prev - params["w"][0], params["w"][0]
        assert step == pytest.approx(1e-3, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def _net_loss(kind):
    def loss(out):
        if kind == "bce":
            return F.bce_loss(out, np.ones_like(out) * (np.arange(out.shape[-1]) % 2))
        return F.mse_loss(out, np.zeros_like(out))

    return loss


class TestNetwork:
    def test_ad_shapes(self):
        net = Network(ad_layers(4), (4, 4, 4)).init(np.random.default_rng(0))
        out = net.forward(np.random.default_rng(1).normal(size=(3, 4, 4, 4)))
        assert out.shape == (3, 4) and np.all((out > 0) & (out < 1))

    def test_sd_residual_shape(self):
        net = Network(sd_layers(), (3, 2, 8)).init(np.random.default_rng(0))
        assert net.output_shape == (2, 2, 8)

    def test_residual_zero_weights_is_identity(self):
        net = Network(sd_layers(), (2, 1, 4))
        x = np.random.default_rng(0).normal(size=(2, 2, 1, 4))
        np.testing.assert_array_equal(net.forward(x), x)

    def test_input_shape_checked(self):
        net = Network(ad_layers(4), (4, 4, 4))
        with pytest.raises(ValueError, match="expects input"):
            net.forward(np.zeros((1, 2, 4, 4)))

    def test_invalid_layers(self):
        with pytest.raises(ValueError):
            LayerSpec("lstm", 3)
        with pytest.raises(ValueError):
            LayerSpec("conv", 3, "tanh")
        with pytest.raises(ValueError, match="dense"):
            Network([dense(4), conv(2)], (1, 2, 2))

    def test_backward_needs_forward(self):
        net = Network([dense(2)], (3,))
        with pytest.raises(RuntimeError):
            net.backward(np.zeros((1, 2)))

    def test_deterministic_forward(self):
        net = Network(ad_layers(4), (4, 4, 4)).init(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 4, 4, 4))
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_input_gradient(self):
        net = Network([conv(3), MAXPOOL, dense(2, "sigmoid")], (2, 2, 4)).init(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 2, 2, 4))
        loss = _net_loss("bce")
        dx, _ = net.backward(loss(net.forward(x, keep=True))[1])
        assert rel_err(dx, numeric_grad(lambda v: loss(net.forward(v))[0], x)) < 1e-6

    def test_linear_dense_grad_check(self):
        net = Network([dense(3, "linear")], (4,)).init(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 4))
        assert grad_check(net, x, _net_loss("mse")) < 1e-8

    @pytest.mark.parametrize("seed", [0, 1])
    def test_subnet_grad_checks(self, seed):
        rng = np.random.default_rng(seed)
        ad = Network(ad_layers(4), (4, 4, 4)).init(rng)
        sd = Network(sd_layers(), (3, 1, 4)).init(rng)
        assert grad_check(ad, rng.normal(size=(3, 4, 4, 4)), _net_loss("bce"), rng=rng) < 1e-4
        assert grad_check(sd, rng.normal(size=(3, 3, 1, 4)), _net_loss("mse"), rng=rng) < 1e-4

    def test_pack_unpack(self):
        z = np.random.default_rng(0).normal(size=(2, 3, 4)) * (1 + 2j)
        np.testing.assert_array_equal(unpack_complex(pack_complex(z)), z)


class TestWeightFiles:
    def _net(self):
        net = Network(ad_layers(4), (4, 4, 4), meta={"role": "ad", "features": "matched-fit"})
        return net.init(np.random.default_rng(0))

    def test_round_trip(self, tmp_path):
        net = self._net()
        path = tmp_path / "ad.imnw"
        save_weights(net, path)
        back = load_weights(path)
        assert back.describe() == net.describe() and back.meta == net.meta
        for name, p in net.params.items():
            np.testing.assert_array_equal(back.params[name], p.astype(np.float32))
            np.testing.assert_allclose(back.params[name], p, rtol=1e-6)
        second = tmp_path / "again.imnw"
        save_weights(back, second)
        assert second.read_bytes() == path.read_bytes()

    def test_file_size(self, tmp_path):
        net = self._net()
        path = tmp_path / "ad.imnw"
        save_weights(net, path)
        raw = path.read_bytes()
        hlen = int.from_bytes(raw[6:10], "little")
        assert len(raw) == 10 + hlen + 4 * net.n_params()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "ad.imnw"
        save_weights(self._net(), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(WeightFileError, match="magic"):
            load_weights(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "ad.imnw"
        save_weights(self._net(), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFileError, match="version"):
            load_weights(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "ad.imnw"
        save_weights(self._net(), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(WeightFileError, match="bytes"):
            load_weights(path)
