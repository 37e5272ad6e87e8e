"""Random layer factories and finite-difference gradient checks shared by tests."""

import numpy as np

from emsforecast.layers import Conv3D, Dense, LocallyConnected2D, TemporalFusion, TransposedConv3D
from oracles import finite_difference_grad, max_rel_error

SMOOTH = ["identity", "sigmoid", "tanh", "elu"]
ALL_ACTS = SMOOTH + ["relu"]


def random_conv3d(rng, acts=ALL_ACTS):
    m_in, filters = rng.integers(1, 3, size=2)
    k = tuple(rng.integers(1, 4, size=3))
    s = tuple(rng.integers(1, 3, size=3))
    padding = rng.choice(["same", "valid"])
    layer = Conv3D.init(m_in, filters, k, s, padding, rng.choice(acts), rng=rng)
    layer.bias = rng.normal(size=filters)
    spatial = [int(rng.integers(kk, kk + 3)) for kk in k]
    x = rng.normal(size=(int(rng.integers(1, 3)), m_in, *spatial))
    return layer, x


def random_tconv3d(rng, acts=ALL_ACTS):
    m_in, filters = rng.integers(1, 3, size=2)
    k = tuple(rng.integers(1, 4, size=3))
    s = tuple(rng.integers(1, 3, size=3))
    layer = TransposedConv3D.init(m_in, filters, k, s, rng.choice(acts), rng=rng)
    layer.bias = rng.normal(size=filters)
    x = rng.normal(size=(int(rng.integers(1, 3)), m_in, *rng.integers(1, 4, size=3)))
    return layer, x


def random_lc2d(rng, acts=ALL_ACTS):
    m_in, filters = rng.integers(1, 3, size=2)
    k = tuple(rng.integers(1, 4, size=2))
    q, p = rng.integers(2, 5, size=2)
    s = tuple(rng.integers(1, 3, size=2))
    layer = LocallyConnected2D.init(m_in, filters, k, (q, p), s, "same", rng.choice(acts), rng=rng)
    layer.bias = rng.normal(size=layer.bias.shape)
    x = rng.normal(size=(int(rng.integers(1, 3)), m_in, q, p))
    return layer, x


def random_dense(rng, acts=ALL_ACTS):
    n_in, n_out = rng.integers(1, 7, size=2)
    layer = Dense.init(n_in, n_out, rng.choice(acts), shared_bias=bool(rng.integers(0, 2)), rng=rng)
    layer.bias = rng.normal(size=layer.bias.shape)
    x = rng.normal(size=(int(rng.integers(1, 4)), n_in))
    return layer, x


def random_fusion(rng, acts=ALL_ACTS):
    m_in, filters, look_back = rng.integers(1, 4, size=3)
    layer = TemporalFusion.init(m_in, filters, look_back, rng.choice(acts), rng=rng)
    layer.bias = rng.normal(size=filters)
    x = rng.normal(size=(int(rng.integers(1, 3)), m_in, *rng.integers(1, 4, size=2), look_back))
    return layer, x


FACTORIES = {
    "conv3d": random_conv3d,
    "tconv3d": random_tconv3d,
    "locally_connected": random_lc2d,
    "dense": random_dense,
    "temporal_fusion": random_fusion,
}


def gradcheck(layer, x, rng, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The scalar under test is ``sum(G * layer(x))`` for a random ``G``.
    """
    out = layer.forward(x)
    g = rng.normal(size=out.shape)
    _, ctx = layer.forward_train(x)
    bundle = layer.backward(ctx, g)

    x = x.copy()
    fd_x = finite_difference_grad(lambda: float(np.sum(g * layer.forward(x))), x, eps)
    w = layer.weights
    fd_w = finite_difference_grad(lambda: float(np.sum(g * layer.forward(x))), w, eps)
    b = layer.bias
    fd_b = finite_difference_grad(lambda: float(np.sum(g * layer.forward(x))), b, eps)
    return max(
        max_rel_error(bundle.grad_input, fd_x, floor=1e-6),
        max_rel_error(bundle.grad_weights, fd_w, floor=1e-6),
        max_rel_error(bundle.grad_bias, fd_b, floor=1e-6),
    )
