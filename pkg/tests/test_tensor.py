import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsforecast.errors import ShapeError
from emsforecast.tensor import (
    Activation,
    activate,
    activation_derivative,
    as_tensor,
    concat,
    crop,
    pad_zero,
    tensor_from_bytes,
    tensor_from_json,
    tensor_to_bytes,
    tensor_to_json,
)


class TestPadZero:
    def test_right_pad(self):
        np.testing.assert_array_equal(pad_zero([1.0, 2.0, 3.0], [(0, 1)]), [1, 2, 3, 0])

    def test_no_pad_is_identity(self):
        t = np.arange(6.0).reshape(2, 3)
        out = pad_zero(t, [(0, 0), (0, 0)])
        np.testing.assert_array_equal(out, t)
        assert out is not t

    def test_rows(self):
        out = pad_zero(np.ones((2, 2)), [(1, 1), (0, 0)])
        assert out.shape == (4, 2)
        np.testing.assert_array_equal(out, [[0, 0], [1, 1], [1, 1], [0, 0]])

    def test_rank_mismatch(self):
        with pytest.raises(ShapeError):
            pad_zero(np.ones((2, 2)), [(1, 1)])

    def test_negative(self):
        with pytest.raises(ShapeError):
            pad_zero(np.ones(2), [(-1, 0)])

    @settings(max_examples=60, deadline=None)
    @given(
        shape=st.lists(st.integers(1, 4), min_size=1, max_size=4),
        data=st.data(),
    )
    def test_crop_inverts_pad(self, shape, data):
        pads = [(data.draw(st.integers(0, 3)), data.draw(st.integers(0, 3))) for _ in shape]
        rng = np.random.default_rng(len(shape))
        t = rng.normal(size=shape)
        padded = pad_zero(t, pads)
        assert padded.shape == tuple(n + b + a for n, (b, a) in zip(shape, pads))
        np.testing.assert_array_equal(crop(padded, pads), t)
        assert padded.sum() == pytest.approx(t.sum())


class TestConcat:
    def test_shapes(self):
        assert concat([np.zeros((2, 1)), np.zeros((2, 3))], axis=1).shape == (2, 4)

    def test_single(self):
        t = np.arange(4.0).reshape(2, 2)
        np.testing.assert_array_equal(concat([t], 0), t)

    def test_order(self):
        a = np.array([[[1.0, 2.0]]])
        b = np.array([[[3.0, 4.0]]])
        np.testing.assert_array_equal(concat([a, b], 2).ravel(), [1, 2, 3, 4])

    def test_errors(self):
        with pytest.raises(ShapeError):
            concat([np.zeros((2, 1)), np.zeros((3, 1))], axis=1)
        with pytest.raises(ValueError):
            concat([], axis=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2))
    def test_associative(self, n1, n2, n3, axis):
        rng = np.random.default_rng(n1 * 9 + n2 * 3 + n3)
        base = [2, 3, 2]

        def make(n):
            s = list(base)
            s[axis] = n
            return rng.normal(size=s)

        a, b, c = make(n1), make(n2), make(n3)
        np.testing.assert_array_equal(concat([concat([a, b], axis), c], axis), concat([a, b, c], axis))


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(activate([-1.0, 0.0, 2.0], "relu"), [0, 0, 2])

    def test_identity(self):
        t = np.array([-3.0, 0.5])
        np.testing.assert_array_equal(activate(t, Activation.IDENTITY), t)

    def test_sigmoid_zero(self):
        assert activate([0.0], "sigmoid")[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = activate([-800.0, 800.0], "sigmoid")
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 1.0])

    @pytest.mark.parametrize("kind", list(Activation))
    def test_derivative_matches_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        x = rng.uniform(-3, 3, size=100)
        # keep away from the relu kink
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
        h = 1e-6
        fd = (activate(x + h, kind) - activate(x - h, kind)) / (2 * h)
        an = activation_derivative(x, kind)
        rel = np.abs(fd - an) / np.maximum(np.abs(an), 1e-3)
        assert rel.max() < 1e-6


class TestSerialization:
    def test_json_round_trip(self):
        t = np.random.default_rng(0).normal(size=(2, 3, 4))
        text = tensor_to_json(t)
        assert '"encoding": "le-binary-base64"' in text
        np.testing.assert_array_equal(tensor_from_json(text), t)

    def test_bytes_little_endian(self):
        payload = tensor_to_bytes(np.array([1.0]))
        assert payload == np.array([1.0], dtype="<f8").tobytes()
        np.testing.assert_array_equal(tensor_from_bytes(payload, [1]), [1.0])

    def test_bad_payload(self):
        with pytest.raises(ShapeError):
            tensor_from_bytes(b"\x00" * 7, [1])

    def test_as_tensor_shape(self):
        assert as_tensor(range(6), shape=[2, 3]).shape == (2, 3)
        with pytest.raises(ShapeError):
            as_tensor(range(5), shape=[2, 3])
