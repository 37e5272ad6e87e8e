"""Dense float64 tensor helpers used by every layer.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64;
the innermost (last listed) axis varies fastest.  The helpers here never
mutate their inputs.
"""

from __future__ import annotations

import base64
import enum
import json

import numpy as np

from .errors import ShapeError

__all__ = [
    "Activation",
    "as_tensor",
    "pad_zero",
    "crop",
    "concat",
    "activate",
    "activation_derivative",
    "tensor_to_json",
    "tensor_from_json",
    "tensor_to_bytes",
    "tensor_from_bytes",
]

DTYPE = np.float64


def as_tensor(values, shape=None) -> np.ndarray:
    """Return a fresh contiguous float64 array, optionally reshaped."""
    t = np.array(values, dtype=DTYPE, order="C", copy=True)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != t.size:
            raise ShapeError(f"cannot view {t.size} values as shape {shape}")
        t = t.reshape(shape)
    return t


def _check_pads(t, pads):
    pads = [tuple(int(v) for v in p) for p in pads]
    if len(pads) != t.ndim:
        raise ShapeError(f"expected {t.ndim} pad pairs, got {len(pads)}")
    for before, after in pads:
        if before < 0 or after < 0:
            raise ShapeError("pads must be non-negative")
    return pads


def pad_zero(t, per_axis_pads) -> np.ndarray:
    """Surround ``t`` with zeros; ``per_axis_pads`` holds one (before, after) pair per axis."""
    t = np.asarray(t, dtype=DTYPE)
    pads = _check_pads(t, per_axis_pads)
    out = np.zeros([n + b + a for n, (b, a) in zip(t.shape, pads)], dtype=DTYPE)
    out[tuple(slice(b, b + n) for n, (b, _) in zip(t.shape, pads))] = t
    return out


def crop(t, per_axis_pads) -> np.ndarray:
    """Inverse of :func:`pad_zero`: strip the given margins."""
    t = np.asarray(t, dtype=DTYPE)
    pads = _check_pads(t, per_axis_pads)
    for n, (b, a) in zip(t.shape, pads):
        if b + a > n:
            raise ShapeError("crop margins exceed axis length")
    return np.array(t[tuple(slice(b, n - a) for n, (b, a) in zip(t.shape, pads))], dtype=DTYPE)


def concat(ts, axis: int) -> np.ndarray:
    """Concatenate tensors along ``axis``; all other axes must agree."""
    ts = [np.asarray(t, dtype=DTYPE) for t in ts]
    if not ts:
        raise ValueError("concat needs at least one tensor")
    rank = ts[0].ndim
    if not -rank <= axis < rank:
        raise ShapeError(f"axis {axis} out of range for rank {rank}")
    axis %= rank
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != rank or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    return np.concatenate(ts, axis=axis)


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    ELU = "elu"

    @classmethod
    def parse(cls, value) -> "Activation":
        return value if isinstance(value, cls) else cls(str(value).lower())


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(t, a) -> np.ndarray:
    """Apply activation ``a`` elementwise."""
    x = np.asarray(t, dtype=DTYPE)
    a = Activation.parse(a)
    if a is Activation.IDENTITY:
        return x.copy()
    if a is Activation.RELU:
        return np.maximum(x, 0.0)
    if a is Activation.SIGMOID:
        return _sigmoid(x)
    if a is Activation.TANH:
        return np.tanh(x)
    # ELU with alpha = 1
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def activation_derivative(t, a) -> np.ndarray:
    """Derivative of activation ``a`` evaluated at the pre-activation ``t``.

    ReLU uses 0 at the kink, ELU is continuously differentiable.
    """
    x = np.asarray(t, dtype=DTYPE)
    a = Activation.parse(a)
    if a is Activation.IDENTITY:
        return np.ones_like(x)
    if a is Activation.RELU:
        return (x > 0).astype(DTYPE)
    if a is Activation.SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if a is Activation.TANH:
        return 1.0 - np.tanh(x) ** 2
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


# -- serialization ---------------------------------------------------------

def tensor_to_bytes(t) -> bytes:
    """Little-endian float64 payload in row-major order."""
    return np.ascontiguousarray(t, dtype="<f8").tobytes()


def tensor_from_bytes(payload: bytes, shape) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise ShapeError(f"payload has {len(payload)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(payload, dtype="<f8").astype(DTYPE).reshape(shape)


def tensor_to_json(t) -> str:
    """Serialize to a JSON object carrying the header and a base64 payload."""
    t = np.asarray(t, dtype=DTYPE)
    doc = {
        "shape": list(t.shape),
        "dtype": "f64",
        "encoding": "le-binary-base64",
        "data": base64.b64encode(tensor_to_bytes(t)).decode("ascii"),
    }
    return json.dumps(doc, sort_keys=True)


def tensor_from_json(text) -> np.ndarray:
    doc = json.loads(text) if isinstance(text, (str, bytes)) else text
    if doc.get("dtype") != "f64" or doc.get("encoding") != "le-binary-base64":
        raise ValueError(f"unsupported tensor encoding {doc.get('dtype')}/{doc.get('encoding')}")
    return tensor_from_bytes(base64.b64decode(doc["data"]), doc["shape"])
