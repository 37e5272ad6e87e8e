import numpy as np
import pytest

from emsforecast.errors import ShapeError
from emsforecast.layers import (
    Conv3D,
    Dense,
    LocallyConnected2D,
    TemporalFusion,
    TransposedConv3D,
    backward,
    conv3d_forward,
    conv3d_param_count,
    dense_forward,
    locally_connected_forward,
    same_pads,
    tconv3d_forward,
    temporal_fusion,
)
from helpers import FACTORIES, gradcheck
from oracles import (
    conv3d_literal,
    conv_matrix_1d_valid,
    dense_literal,
    linear_operator_matrix,
    locally_connected_literal,
    tconv3d_literal,
)


def conv_1d(w, b=0.0, act="identity", padding="same", stride=1):
    return Conv3D(np.array(w, float).reshape(1, 1, 1, 1, -1), [b], (1, 1, stride), padding, act)


def tconv_1d(w, b=0.0, stride=1):
    return TransposedConv3D(np.array(w, float).reshape(1, 1, 1, 1, -1), [b], (1, 1, stride))


class TestConv3D:
    def test_zero_weights(self):
        layer = Conv3D(np.zeros((2, 1, 2, 2, 2)), np.zeros(2))
        out = conv3d_forward(layer, np.random.default_rng(0).normal(size=(1, 3, 3, 3)))
        assert out.shape == (2, 3, 3, 3)
        assert not out.any()

    def test_worked_example_same_padding(self):
        out = conv3d_forward(conv_1d([1, 1]), np.array([1.0, 2, 3]).reshape(1, 1, 1, 3))
        np.testing.assert_allclose(out.ravel(), [3, 5, 3], atol=1e-12)

    def test_worked_example_relu(self):
        out = conv3d_forward(conv_1d([1, 0], b=-2, act="relu"), np.array([1.0, 2, 3]).reshape(1, 1, 1, 3))
        np.testing.assert_allclose(out.ravel(), [0, 0, 1], atol=1e-12)

    @pytest.mark.parametrize(
        "kernel,m_in,m_out,expected", [((3, 3, 3), 4, 8, 872), ((1, 1, 1), 1, 1, 2), ((2, 2, 2), 1, 3, 27)]
    )
    def test_param_count(self, kernel, m_in, m_out, expected):
        assert conv3d_param_count(Conv3D.init(m_in, m_out, kernel)) == expected

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv3d_forward(Conv3D.init(2, 1, 1), np.zeros((1, 2, 2, 2)))

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_same_padding_preserves_shape(self, k):
        layer = Conv3D.init(1, 2, (k, k, k), padding="same", rng=0)
        assert conv3d_forward(layer, np.ones((1, 4, 3, 6))).shape == (2, 4, 3, 6)

    def test_same_pads_smaller_before(self):
        assert same_pads(2) == (0, 1)
        assert same_pads(3) == (1, 1)
        assert same_pads(4) == (1, 2)

    def test_matches_literal_equation(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            layer, x = FACTORIES["conv3d"](rng)
            pads = layer.pads()
            act = lambda v, a=layer.activation: float(
                {"identity": v, "relu": max(v, 0.0), "sigmoid": 1 / (1 + np.exp(-v)), "tanh": np.tanh(v),
                 "elu": v if v > 0 else np.expm1(v)}[a.value])
            ref = conv3d_literal(x[0], layer.weights, layer.bias, layer.stride, pads, act)
            np.testing.assert_allclose(conv3d_forward(layer, x[0]), ref, atol=1e-12)


class TestTransposedConv3D:
    def test_worked_example(self):
        out = tconv3d_forward(tconv_1d([3, 5]), np.array([1.0, 2]).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(out.ravel(), [3, 11, 10], atol=1e-12)

    def test_worked_example_against_transpose_oracle(self):
        # transpose of the valid conv matrix on the output length
        a = conv_matrix_1d_valid(3, [3, 5], 1)
        np.testing.assert_allclose(a.T @ np.array([1.0, 2.0]), [3, 11, 10], atol=1e-12)

    def test_stride_two(self):
        out = tconv3d_forward(tconv_1d([1, 1, 1], stride=2), np.ones((1, 1, 1, 2)))
        np.testing.assert_allclose(out.ravel(), [1, 1, 2, 1, 1], atol=1e-12)

    def test_zero_weights(self):
        layer = TransposedConv3D(np.zeros((1, 1, 1, 1, 3)), [0.0], (1, 1, 2))
        out = tconv3d_forward(layer, np.ones((1, 1, 1, 4)))
        assert out.shape == (1, 1, 1, 9)
        assert not out.any()

    def test_output_size(self):
        layer = TransposedConv3D.init(2, 3, (3, 2, 1), (2, 1, 3), rng=1)
        assert tconv3d_forward(layer, np.ones((2, 2, 3, 2))).shape == (3, 5, 4, 4)

    def test_matches_literal_equation(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            layer, x = FACTORIES["tconv3d"](rng, acts=["identity"])
            ref = tconv3d_literal(x[0], layer.weights, layer.bias, layer.stride)
            np.testing.assert_allclose(tconv3d_forward(layer, x[0]), ref, atol=1e-12)

    def test_duality_with_conv(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            m_in, m_out = rng.integers(1, 3, size=2)
            k = tuple(int(v) for v in rng.integers(1, 3, size=3))
            s = tuple(int(v) for v in rng.integers(1, 3, size=3))
            n_small = tuple(int(v) for v in rng.integers(1, 3, size=3))
            n_big = tuple((n - 1) * ss + kk for n, ss, kk in zip(n_small, s, k))
            w = rng.normal(size=(m_out, m_in) + k)
            conv = Conv3D(w, np.zeros(m_out), s, "valid")
            tconv = TransposedConv3D(w.swapaxes(0, 1), np.zeros(m_in), s)
            a = linear_operator_matrix(lambda v: conv3d_forward(conv, v), (m_in,) + n_big)
            b = linear_operator_matrix(lambda v: tconv3d_forward(tconv, v), (m_out,) + n_small)
            np.testing.assert_allclose(b, a.T, atol=1e-10)


class TestLocallyConnected:
    def test_identity(self):
        layer = LocallyConnected2D(np.ones((3, 2, 1, 1, 1, 1)), np.zeros((1, 3, 2)))
        x = np.random.default_rng(0).normal(size=(1, 3, 2))
        np.testing.assert_allclose(locally_connected_forward(layer, x), x, atol=1e-12)

    def test_worked_example(self):
        w = np.array([2.0, 3.0]).reshape(2, 1, 1, 1, 1, 1)
        layer = LocallyConnected2D(w, np.array([1.0, -1.0]).reshape(1, 2, 1))
        out = locally_connected_forward(layer, np.array([[[4.0], [5.0]]]))
        np.testing.assert_allclose(out, [[[9.0], [14.0]]], atol=1e-12)

    def test_untied_count(self):
        assert LocallyConnected2D.init(3, 1, (1, 1), (2, 2)).param_count() == 16

    def test_general_count(self):
        layer = LocallyConnected2D.init(2, 3, (3, 2), (4, 5))
        assert layer.param_count() == (3 * 2 * 2 + 1) * 4 * 5 * 3

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            locally_connected_forward(LocallyConnected2D.init(2, 1, 1, (2, 2)), np.zeros((1, 2, 2)))

    def test_matches_literal_equation(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            layer, x = FACTORIES["locally_connected"](rng, acts=["identity"])
            ref = locally_connected_literal(x[0], layer.weights, layer.bias, layer.stride, layer.pads())
            np.testing.assert_allclose(locally_connected_forward(layer, x[0]), ref, atol=1e-12)


class TestDense:
    def test_identity(self):
        layer = Dense(np.eye(3), [0.0])
        np.testing.assert_allclose(dense_forward(layer, [1.0, -2.0, 3.0]), [1, -2, 3], atol=1e-12)

    def test_worked_example(self):
        layer = Dense([[1.0, 2.0], [3.0, 4.0]], [1.0])
        np.testing.assert_allclose(dense_forward(layer, [1.0, 1.0]), [4, 8], atol=1e-12)

    def test_worked_example_shared_bias(self):
        layer = Dense([[1.0, 2.0], [3.0, 4.0]], [1.0], shared_bias=True)
        np.testing.assert_allclose(dense_forward(layer, [1.0, 1.0]), [4, 8], atol=1e-12)
        assert layer.param_count() == 5

    def test_param_count(self):
        assert Dense.init(10, 5).param_count() == 55

    def test_matches_literal(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 3))
        for shared in (False, True):
            b = rng.normal(size=1 if shared else 4)
            x = rng.normal(size=3)
            np.testing.assert_allclose(dense_forward(Dense(w, b, shared_bias=shared), x),
                                       dense_literal(x, w, b), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            dense_forward(Dense.init(3, 2), np.zeros(4))


class TestTemporalFusion:
    def test_squeeze_only(self):
        layer = TemporalFusion(Conv3D(np.ones((1, 1, 1, 1, 1)), [0.0], (1, 1, 1), "valid"))
        x = np.random.default_rng(0).normal(size=(1, 2, 3, 1))
        np.testing.assert_allclose(temporal_fusion(layer, x), x[..., 0], atol=1e-12)

    def test_sum_over_time(self):
        layer = TemporalFusion(Conv3D(np.ones((1, 1, 1, 1, 3)), [0.0], (1, 1, 3), "valid"))
        x = np.array([1.0, 2.0, 4.0]).reshape(1, 1, 1, 3)
        np.testing.assert_allclose(temporal_fusion(layer, x), [[[7.0]]], atol=1e-12)

    def test_zero_weights(self):
        layer = TemporalFusion(Conv3D(np.zeros((2, 1, 1, 1, 3)), [0.0, 0.0], (1, 1, 3), "valid"))
        out = temporal_fusion(layer, np.ones((1, 2, 2, 3)))
        assert out.shape == (2, 2, 2) and not out.any()


class TestBackward:
    def test_zero_grad_output(self):
        rng = np.random.default_rng(0)
        for name, factory in FACTORIES.items():
            layer, x = factory(rng)
            out = layer.forward(x)
            bundle = backward(layer, x, np.zeros_like(out), batched=True)
            assert not bundle.grad_input.any(), name
            assert not bundle.grad_weights.any(), name
            assert not bundle.grad_bias.any(), name

    def test_dense_outer_product(self):
        rng = np.random.default_rng(1)
        layer = Dense.init(4, 3, rng=rng)
        x = rng.normal(size=4)
        g = rng.normal(size=3)
        bundle = backward(layer, x, g)
        np.testing.assert_allclose(bundle.grad_weights, np.outer(g, x), atol=1e-14)
        np.testing.assert_allclose(bundle.grad_input, layer.weights.T @ g, atol=1e-14)

    @pytest.mark.parametrize("name", sorted(FACTORIES))
    def test_finite_differences(self, name):
        rng = np.random.default_rng(100)
        for _ in range(8):
            layer, x = FACTORIES[name](rng)
            assert gradcheck(layer, x, rng) < 1e-4

    def test_shape_mismatch(self):
        layer = Dense.init(2, 2)
        _, ctx = layer.forward_train(np.zeros((1, 2)))
        with pytest.raises(ShapeError):
            layer.backward(ctx, np.zeros((1, 3)))
