"""Convolutional, transposed-convolutional, locally connected and dense layers.

Every layer works on batched arrays whose first axis is the batch and whose
second axis enumerates input maps::

    Conv3D / TransposedConv3D   (B, M, d1, d2, d3)
    LocallyConnected2D          (B, M, q, p)
    Dense                       (B, N)

Module-level ``*_forward`` functions accept a single unbatched instance, which
is how the layer equations are usually written down.  ``layer.forward_train``
returns the output together with a context object that ``layer.backward``
consumes to produce exact gradients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import DTYPE, Activation, activate, activation_derivative

__all__ = [
    "GradientBundle",
    "Conv3D",
    "TransposedConv3D",
    "LocallyConnected2D",
    "Dense",
    "TemporalFusion",
    "same_pads",
    "conv3d_forward",
    "conv3d_param_count",
    "tconv3d_forward",
    "locally_connected_forward",
    "dense_forward",
    "temporal_fusion",
    "backward",
]


@dataclass
class GradientBundle:
    grad_input: np.ndarray
    grad_weights: np.ndarray
    grad_bias: np.ndarray


def same_pads(k: int) -> tuple[int, int]:
    """Zero padding that keeps a unit-stride axis at its length.

    The smaller half goes in front: ``(floor((k-1)/2), ceil((k-1)/2))``.
    """
    return (k - 1) // 2, k // 2


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ShapeError(f"expected 3 values, got {v}")
    return v


def _pair(v):
    if np.isscalar(v):
        return (int(v),) * 2
    v = tuple(int(x) for x in v)
    if len(v) != 2:
        raise ShapeError(f"expected 2 values, got {v}")
    return v


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def _activate_out(z, activation):
    return activate(z, activation)


def _grad_pre(ctx_z, grad_out, activation):
    if activation is Activation.IDENTITY:
        return grad_out
    return grad_out * activation_derivative(ctx_z, activation)


# -- 3-D convolution -------------------------------------------------------


@dataclass(eq=False)
class Conv3D:
    """Strided 3-D convolution over ``M_in`` input maps.

    ``weights`` has shape ``(filters, in_maps, k1, k2, k3)`` and ``bias`` one
    entry per filter.  ``padding`` is ``"same"`` (asymmetric zero padding from
    :func:`same_pads`) or ``"valid"``.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1, 1, 1)
    padding: str = "same"
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 5:
            raise ShapeError("Conv3D weights must be (filters, in_maps, k1, k2, k3)")
        self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(self.weights.shape[0])
        self.stride = _triple(self.stride)
        if min(self.stride) < 1:
            raise ShapeError("strides must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        self.activation = Activation.parse(self.activation)

    @classmethod
    def init(cls, in_maps, filters, kernel, stride=(1, 1, 1), padding="same",
             activation="identity", rng=None):
        rng = np.random.default_rng(rng)
        k = _triple(kernel)
        kk = int(np.prod(k))
        w = _glorot(rng, (filters, in_maps) + k, in_maps * kk, filters * kk)
        return cls(w, np.zeros(filters), stride, padding, activation)

    @property
    def in_maps(self) -> int:
        return self.weights.shape[1]

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple:
        return self.weights.shape[2:]

    def param_count(self) -> int:
        k1, k2, k3 = self.kernel
        return (k1 * k2 * k3 * self.in_maps + 1) * self.filters

    def pads(self):
        if self.padding == "valid":
            return [(0, 0)] * 3
        return [same_pads(k) for k in self.kernel]

    def output_shape(self, spatial):
        out = []
        for n, k, s, (b, a) in zip(spatial, self.kernel, self.stride, self.pads()):
            m = (n + b + a - k) // s + 1
            if m < 1:
                raise ShapeError(f"kernel {k} larger than padded axis {n + b + a}")
            out.append(m)
        return tuple(out)

    def _check(self, x):
        if x.ndim != 5 or x.shape[1] != self.in_maps:
            raise ShapeError(f"Conv3D expects (B, {self.in_maps}, d1, d2, d3), got {x.shape}")

    def _windows(self, x):
        outs = self.output_shape(x.shape[2:])
        xp = np.pad(x, [(0, 0), (0, 0)] + self.pads())
        win = sliding_window_view(xp, self.kernel, axis=(2, 3, 4))
        s1, s2, s3 = self.stride
        o1, o2, o3 = outs
        win = win[:, :, : s1 * (o1 - 1) + 1 : s1, : s2 * (o2 - 1) + 1 : s2, : s3 * (o3 - 1) + 1 : s3]
        return xp.shape, win

    def forward_train(self, x):
        x = np.asarray(x, dtype=DTYPE)
        self._check(x)
        xp_shape, win = self._windows(x)
        z = np.tensordot(win, self.weights, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        z = np.moveaxis(z, -1, 1) + self.bias[None, :, None, None, None]
        return _activate_out(z, self.activation), (x.shape, xp_shape, win, z)

    def forward(self, x):
        return self.forward_train(x)[0]

    def backward(self, ctx, grad_out) -> GradientBundle:
        x_shape, xp_shape, win, z = ctx
        g = _grad_pre(z, np.asarray(grad_out, dtype=DTYPE), self.activation)
        if g.shape != z.shape:
            raise ShapeError(f"grad_output shape {g.shape} != output shape {z.shape}")
        grad_w = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        grad_b = g.sum(axis=(0, 2, 3, 4))
        # (B, o1, o2, o3, M_in, k1, k2, k3)
        gwin = np.tensordot(g, self.weights, axes=([1], [0]))
        gxp = np.zeros(xp_shape, dtype=DTYPE)
        s1, s2, s3 = self.stride
        o1, o2, o3 = z.shape[2:]
        for w1, w2, w3 in itertools.product(*(range(k) for k in self.kernel)):
            gxp[:, :, w1 : w1 + s1 * (o1 - 1) + 1 : s1, w2 : w2 + s2 * (o2 - 1) + 1 : s2,
                w3 : w3 + s3 * (o3 - 1) + 1 : s3] += np.moveaxis(gwin[..., w1, w2, w3], -1, 1)
        (b1, _), (b2, _), (b3, _) = self.pads()
        n1, n2, n3 = x_shape[2:]
        gx = gxp[:, :, b1 : b1 + n1, b2 : b2 + n2, b3 : b3 + n3]
        return GradientBundle(np.ascontiguousarray(gx), grad_w, grad_b)


# -- transposed 3-D convolution --------------------------------------------


@dataclass(eq=False)
class TransposedConv3D:
    """Unpadded transposed 3-D convolution.

    ``weights`` has shape ``(filters, in_maps, k1, k2, k3)``; each output axis
    has length ``(n - 1) * s + k``.  Input cell ``j`` scatters into outputs
    ``s * j + w`` for kernel offsets ``w``, which is the index relation
    ``w = x - s * (x // s - i)`` used by the gather form.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1, 1, 1)
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 5:
            raise ShapeError("TransposedConv3D weights must be (filters, in_maps, k1, k2, k3)")
        self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(self.weights.shape[0])
        self.stride = _triple(self.stride)
        if min(self.stride) < 1:
            raise ShapeError("strides must be >= 1")
        self.activation = Activation.parse(self.activation)

    @classmethod
    def init(cls, in_maps, filters, kernel, stride=(1, 1, 1), activation="identity", rng=None):
        rng = np.random.default_rng(rng)
        k = _triple(kernel)
        kk = int(np.prod(k))
        w = _glorot(rng, (filters, in_maps) + k, in_maps * kk, filters * kk)
        return cls(w, np.zeros(filters), stride, activation)

    @property
    def in_maps(self) -> int:
        return self.weights.shape[1]

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple:
        return self.weights.shape[2:]

    def param_count(self) -> int:
        k1, k2, k3 = self.kernel
        return (k1 * k2 * k3 * self.in_maps + 1) * self.filters

    def output_shape(self, spatial):
        return tuple((n - 1) * s + k for n, s, k in zip(spatial, self.stride, self.kernel))

    def forward_train(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 5 or x.shape[1] != self.in_maps:
            raise ShapeError(f"TransposedConv3D expects (B, {self.in_maps}, d1, d2, d3), got {x.shape}")
        n1, n2, n3 = x.shape[2:]
        s1, s2, s3 = self.stride
        # (B, n1, n2, n3, filters, k1, k2, k3)
        contrib = np.tensordot(x, self.weights, axes=([1], [1]))
        z = np.zeros((x.shape[0], self.filters) + self.output_shape(x.shape[2:]), dtype=DTYPE)
        for w1, w2, w3 in itertools.product(*(range(k) for k in self.kernel)):
            z[:, :, w1 : w1 + s1 * (n1 - 1) + 1 : s1, w2 : w2 + s2 * (n2 - 1) + 1 : s2,
              w3 : w3 + s3 * (n3 - 1) + 1 : s3] += np.moveaxis(contrib[..., w1, w2, w3], -1, 1)
        z += self.bias[None, :, None, None, None]
        return _activate_out(z, self.activation), (x, z)

    def forward(self, x):
        return self.forward_train(x)[0]

    def backward(self, ctx, grad_out) -> GradientBundle:
        x, z = ctx
        g = _grad_pre(z, np.asarray(grad_out, dtype=DTYPE), self.activation)
        if g.shape != z.shape:
            raise ShapeError(f"grad_output shape {g.shape} != output shape {z.shape}")
        n1, n2, n3 = x.shape[2:]
        s1, s2, s3 = self.stride
        gwin = sliding_window_view(g, self.kernel, axis=(2, 3, 4))
        gwin = gwin[:, :, : s1 * (n1 - 1) + 1 : s1, : s2 * (n2 - 1) + 1 : s2, : s3 * (n3 - 1) + 1 : s3]
        gx = np.moveaxis(np.tensordot(gwin, self.weights, axes=([1, 5, 6, 7], [0, 2, 3, 4])), -1, 1)
        grad_w = np.tensordot(x, gwin, axes=([0, 2, 3, 4], [0, 2, 3, 4])).swapaxes(0, 1)
        grad_b = g.sum(axis=(0, 2, 3, 4))
        return GradientBundle(np.ascontiguousarray(gx), np.ascontiguousarray(grad_w), grad_b)


# -- locally connected 2-D ---------------------------------------------------


@dataclass(eq=False)
class LocallyConnected2D:
    """Convolution-shaped layer with untied weights per output position.

    ``weights`` has shape ``(q_out, p_out, filters, in_maps, k1, k2)`` and
    ``bias`` shape ``(filters, q_out, p_out)``.  With ``padding="same"`` and
    unit stride the output keeps the input's ``q x p`` extent.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1, 1)
    padding: str = "same"
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 6:
            raise ShapeError("LocallyConnected2D weights must be (q, p, filters, in_maps, k1, k2)")
        q, p, h = self.weights.shape[:3]
        self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(h, q, p)
        self.stride = _pair(self.stride)
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        self.activation = Activation.parse(self.activation)

    @classmethod
    def init(cls, in_maps, filters, kernel, grid, stride=(1, 1), padding="same",
             activation="identity", rng=None):
        """``grid`` is the (q, p) extent of the *input*."""
        rng = np.random.default_rng(rng)
        k = _pair(kernel)
        s = _pair(stride)
        pads = [same_pads(kk) if padding == "same" else (0, 0) for kk in k]
        out = [(n + b + a - kk) // ss + 1 for n, (b, a), kk, ss in zip(grid, pads, k, s)]
        kk = k[0] * k[1]
        w = _glorot(rng, (out[0], out[1], filters, in_maps) + k, in_maps * kk, filters * kk)
        return cls(w, np.zeros((filters, out[0], out[1])), s, padding, activation)

    @property
    def in_maps(self) -> int:
        return self.weights.shape[3]

    @property
    def filters(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel(self) -> tuple:
        return self.weights.shape[4:]

    @property
    def out_grid(self) -> tuple:
        return self.weights.shape[:2]

    def param_count(self) -> int:
        k1, k2 = self.kernel
        q, p = self.out_grid
        return (k1 * k2 * self.in_maps + 1) * q * p * self.filters

    def pads(self):
        if self.padding == "valid":
            return [(0, 0)] * 2
        return [same_pads(k) for k in self.kernel]

    def forward_train(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 4 or x.shape[1] != self.in_maps:
            raise ShapeError(f"LocallyConnected2D expects (B, {self.in_maps}, q, p), got {x.shape}")
        xp = np.pad(x, [(0, 0), (0, 0)] + self.pads())
        (s1, s2), (o1, o2) = self.stride, self.out_grid
        win = sliding_window_view(xp, self.kernel, axis=(2, 3))
        win = win[:, :, : s1 * (o1 - 1) + 1 : s1, : s2 * (o2 - 1) + 1 : s2]
        if win.shape[2:4] != (o1, o2):
            raise ShapeError(f"input grid {x.shape[2:]} does not produce the layer's output grid {self.out_grid}")
        z = np.einsum("bmxyuv,xyhmuv->bhxy", win, self.weights, optimize=True) + self.bias[None]
        return _activate_out(z, self.activation), (x.shape, xp.shape, win, z)

    def forward(self, x):
        return self.forward_train(x)[0]

    def backward(self, ctx, grad_out) -> GradientBundle:
        x_shape, xp_shape, win, z = ctx
        g = _grad_pre(z, np.asarray(grad_out, dtype=DTYPE), self.activation)
        if g.shape != z.shape:
            raise ShapeError(f"grad_output shape {g.shape} != output shape {z.shape}")
        grad_w = np.einsum("bhxy,bmxyuv->xyhmuv", g, win, optimize=True)
        grad_b = g.sum(axis=0)
        gwin = np.einsum("bhxy,xyhmuv->bmxyuv", g, self.weights, optimize=True)
        gxp = np.zeros(xp_shape, dtype=DTYPE)
        (s1, s2), (o1, o2) = self.stride, self.out_grid
        for w1, w2 in itertools.product(*(range(k) for k in self.kernel)):
            gxp[:, :, w1 : w1 + s1 * (o1 - 1) + 1 : s1, w2 : w2 + s2 * (o2 - 1) + 1 : s2] += gwin[..., w1, w2]
        (b1, _), (b2, _) = self.pads()
        gx = gxp[:, :, b1 : b1 + x_shape[2], b2 : b2 + x_shape[3]]
        return GradientBundle(np.ascontiguousarray(gx), grad_w, grad_b)


# -- dense -------------------------------------------------------------------


@dataclass(eq=False)
class Dense:
    """Fully connected layer ``a = act(W @ x + b)`` with ``W`` of shape (out, in).

    By default every neuron has its own bias, so the parameter count is
    ``(in + 1) * out``.  ``shared_bias=True`` keeps a single bias for the
    whole layer (one extra parameter instead of ``out``).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY
    shared_bias: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 2:
            raise ShapeError("Dense weights must be (out_size, in_size)")
        n_bias = 1 if self.shared_bias else self.weights.shape[0]
        b = np.asarray(self.bias, dtype=DTYPE).reshape(-1)
        if b.size == 1 and n_bias > 1:
            b = np.full(n_bias, b[0])
        if b.size != n_bias:
            raise ShapeError(f"expected {n_bias} bias values, got {b.size}")
        self.bias = b
        self.activation = Activation.parse(self.activation)

    @classmethod
    def init(cls, in_size, out_size, activation="identity", shared_bias=False, rng=None):
        rng = np.random.default_rng(rng)
        w = _glorot(rng, (out_size, in_size), in_size, out_size)
        return cls(w, np.zeros(1 if shared_bias else out_size), activation, shared_bias)

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    def param_count(self) -> int:
        return self.weights.size + self.bias.size

    def forward_train(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeError(f"Dense expects (B, {self.in_size}), got {x.shape}")
        z = x @ self.weights.T + self.bias
        return _activate_out(z, self.activation), (x, z)

    def forward(self, x):
        return self.forward_train(x)[0]

    def backward(self, ctx, grad_out) -> GradientBundle:
        x, z = ctx
        g = _grad_pre(z, np.asarray(grad_out, dtype=DTYPE), self.activation)
        if g.shape != z.shape:
            raise ShapeError(f"grad_output shape {g.shape} != output shape {z.shape}")
        grad_b = g.sum(axis=0)
        if self.shared_bias:
            grad_b = np.array([grad_b.sum()])
        return GradientBundle(g @ self.weights, g.T @ x, grad_b)


# -- temporal fusion -------------------------------------------------------------


@dataclass(eq=False)
class TemporalFusion:
    """Collapse the time axis with a learnable ``(1, 1, L)`` convolution.

    Input ``(B, M, q, p, L)``, output ``(B, filters, q, p)``.
    """

    conv: Conv3D = field(repr=False)

    @classmethod
    def init(cls, in_maps, filters, look_back, activation="identity", rng=None):
        conv = Conv3D.init(in_maps, filters, (1, 1, look_back), stride=(1, 1, look_back),
                           padding="valid", activation=activation, rng=rng)
        return cls(conv)

    @property
    def weights(self):
        return self.conv.weights

    @weights.setter
    def weights(self, value):
        self.conv.weights = np.asarray(value, dtype=DTYPE)

    @property
    def bias(self):
        return self.conv.bias

    @bias.setter
    def bias(self, value):
        self.conv.bias = np.asarray(value, dtype=DTYPE)

    @property
    def activation(self):
        return self.conv.activation

    def param_count(self) -> int:
        return self.conv.param_count()

    def forward_train(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 5 or x.shape[-1] != self.conv.kernel[2]:
            raise ShapeError(f"TemporalFusion expects time axis {self.conv.kernel[2]}, got {x.shape}")
        out, ctx = self.conv.forward_train(x)
        return out[..., 0], ctx

    def forward(self, x):
        return self.forward_train(x)[0]

    def backward(self, ctx, grad_out) -> GradientBundle:
        return self.conv.backward(ctx, np.asarray(grad_out, dtype=DTYPE)[..., None])


# -- single-instance entry points ------------------------------------------------


def conv3d_forward(layer: Conv3D, x) -> np.ndarray:
    """Forward one ``(M_in, d1, d2, d3)`` instance."""
    return layer.forward(np.asarray(x, dtype=DTYPE)[None])[0]


def conv3d_param_count(layer: Conv3D) -> int:
    return layer.param_count()


def tconv3d_forward(layer: TransposedConv3D, x) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=DTYPE)[None])[0]


def locally_connected_forward(layer: LocallyConnected2D, x) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=DTYPE)[None])[0]


def dense_forward(layer: Dense, x) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=DTYPE)[None])[0]


def temporal_fusion(layer: TemporalFusion, x) -> np.ndarray:
    """Fuse one ``(M, q, p, L)`` instance into ``(filters, q, p)`` maps."""
    return layer.forward(np.asarray(x, dtype=DTYPE)[None])[0]


def backward(layer, x, grad_output, batched=False) -> GradientBundle:
    """Gradients of ``sum(grad_output * layer(x))`` w.r.t. input, weights and bias."""
    x = np.asarray(x, dtype=DTYPE)
    g = np.asarray(grad_output, dtype=DTYPE)
    if not batched:
        x, g = x[None], g[None]
    _, ctx = layer.forward_train(x)
    out = layer.backward(ctx, g)
    if not batched:
        out.grad_input = out.grad_input[0]
    return out
