"""Slow, literal reference implementations used as independent test oracles.

Each function transcribes a layer equation term by term with explicit loops
and never reuses the vectorised code paths it is compared against.
"""

import itertools
import math

import numpy as np


def conv3d_literal(x, w, b, stride, pads, act=lambda v: v):
    """x: (M_in, n1, n2, n3), w: (H, M_in, k1, k2, k3), pads per axis (before, after)."""
    m_in, *n = x.shape
    h_out, _, *k = w.shape
    xp = np.zeros([m_in] + [nn + pb + pa for nn, (pb, pa) in zip(n, pads)])
    xp[(slice(None),) + tuple(slice(pb, pb + nn) for nn, (pb, _) in zip(n, pads))] = x
    outs = [(xp.shape[i + 1] - k[i]) // stride[i] + 1 for i in range(3)]
    out = np.zeros([h_out] + outs)
    for h, x1, x2, x3 in itertools.product(range(h_out), *(range(o) for o in outs)):
        acc = 0.0
        for m, w1, w2, w3 in itertools.product(range(m_in), range(k[0]), range(k[1]), range(k[2])):
            acc += xp[m, stride[0] * x1 + w1, stride[1] * x2 + w2, stride[2] * x3 + w3] * w[h, m, w1, w2, w3]
        out[h, x1, x2, x3] = act(acc + b[h])
    return out


def iota(x, i, s):
    return x - s * (x // s - i)


def tconv3d_literal(x, w, b, stride, act=lambda v: v):
    """Gather form with the index helper; terms kept only for valid kernel and input indices."""
    m_in, *n = x.shape
    h_out, _, *k = w.shape
    outs = [(n[a] - 1) * stride[a] + k[a] for a in range(3)]
    out = np.zeros([h_out] + outs)
    for h, X1, X2, X3 in itertools.product(range(h_out), *(range(o) for o in outs)):
        acc = 0.0
        pos = (X1, X2, X3)
        ranges = [range(0, pos[a] // stride[a] + 1) for a in range(3)]
        for m in range(m_in):
            for i1, i2, i3 in itertools.product(*ranges):
                idx = (i1, i2, i3)
                kw = [iota(pos[a], idx[a], stride[a]) for a in range(3)]
                src = [pos[a] // stride[a] - idx[a] for a in range(3)]
                if any(kw[a] >= k[a] for a in range(3)):
                    continue
                if any(src[a] < 0 or src[a] >= n[a] for a in range(3)):
                    continue
                acc += x[m, src[0], src[1], src[2]] * w[h, m, kw[0], kw[1], kw[2]]
        out[h, X1, X2, X3] = act(acc + b[h])
    return out


def locally_connected_literal(x, w, b, stride, pads, act=lambda v: v):
    """x: (M_in, q, p); w: (qo, po, H, M_in, k1, k2); b: (H, qo, po)."""
    m_in, q, p = x.shape
    qo, po, h_out, _, k1, k2 = w.shape
    xp = np.zeros((m_in, q + sum(pads[0]), p + sum(pads[1])))
    xp[:, pads[0][0] : pads[0][0] + q, pads[1][0] : pads[1][0] + p] = x
    out = np.zeros((h_out, qo, po))
    for h, x1, x2 in itertools.product(range(h_out), range(qo), range(po)):
        acc = 0.0
        for m, w1, w2 in itertools.product(range(m_in), range(k1), range(k2)):
            acc += xp[m, x1 * stride[0] + w1, x2 * stride[1] + w2] * w[x1, x2, h, m, w1, w2]
        out[h, x1, x2] = act(acc + b[h, x1, x2])
    return out


def dense_literal(x, w, b, act=lambda v: v):
    out = []
    for i in range(w.shape[0]):
        acc = sum(w[i, j] * x[j] for j in range(w.shape[1]))
        out.append(act(acc + (b[0] if len(b) == 1 else b[i])))
    return np.array(out)


def conv_matrix_1d_valid(n, w, s):
    """Matrix realising a single-channel valid 1-D convolution on length n."""
    k = len(w)
    m = (n - k) // s + 1
    a = np.zeros((m, n))
    for r in range(m):
        for j in range(k):
            a[r, s * r + j] = w[j]
    return a


def linear_operator_matrix(fn, in_shape):
    """Materialise a linear map by probing it with unit vectors (columns)."""
    size = int(np.prod(in_shape))
    cols = []
    for i in range(size):
        e = np.zeros(size)
        e[i] = 1.0
        cols.append(np.ravel(fn(e.reshape(in_shape))))
    return np.stack(cols, axis=1)


def standard_normal_pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def standard_normal_cdf(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def finite_difference_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def max_rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
