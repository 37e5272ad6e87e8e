"""Model construction, minibatch training with early stopping, prediction, persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets.core import DemandDataset, FeatureSchema
from ..datasets.features import Scaler
from ..datasets.io import atomic_write
from ..errors import ShapeError, SpecError, TrainingDiverged
from ..tensor import tensor_from_bytes, tensor_to_bytes
from .network import Network, build_network, gather_inputs
from .spec import ModelSpec, TrainOptions, schema_hash

__all__ = [
    "TrainedModel",
    "build_cnn",
    "build_mlp",
    "train",
    "predict",
    "predict_demand",
    "count_params",
    "mse_loss",
    "save_model",
    "load_model",
    "Optimizer",
]


@dataclass
class TrainedModel:
    spec: ModelSpec
    schema: FeatureSchema
    network: Network
    history: list = field(default_factory=list)
    scaler: Scaler | None = None
    best_epoch: int | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def weights(self):
        return dict(self.network.parameters())


def _build(spec, schema, kind, rng):
    if spec.kind != kind:
        raise SpecError(f"expected a {kind} spec, got kind {spec.kind!r}")
    if schema.demand in spec.feature_mask and not spec.feature_mask[schema.demand]:
        raise SpecError("the demand history cannot be masked off")
    return TrainedModel(spec, schema, build_network(spec, schema, rng))


def build_cnn(spec: ModelSpec, schema: FeatureSchema, rng=None) -> TrainedModel:
    return _build(spec, schema, "cnn", rng)


def build_mlp(spec: ModelSpec, schema: FeatureSchema, rng=None) -> TrainedModel:
    return _build(spec, schema, "mlp", rng)


def count_params(m) -> int:
    if m is None:
        return 0
    if isinstance(m, TrainedModel):
        return m.network.param_count()
    if hasattr(m, "param_count"):
        return int(m.param_count())
    return int(sum(layer.param_count() for layer in m))


def mse_loss(pred, target):
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


class Optimizer:
    """Constant-rate sgd, heavy-ball momentum (0.9) or Adam (0.9, 0.999, 1e-8).

    Updates are applied in place to the network's parameter arrays.
    """

    def __init__(self, kind, lr, momentum=0.9, beta1=0.9, beta2=0.999, eps=1e-8):
        self.kind, self.lr = kind, lr
        self.momentum, self.beta1, self.beta2, self.eps = momentum, beta1, beta2, eps
        self.state = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for key, p in params:
            g = grads[key]
            if self.kind == "sgd":
                p -= self.lr * g
            elif self.kind == "momentum":
                v = self.state.setdefault(key, np.zeros_like(p))
                v *= self.momentum
                v -= self.lr * g
                p += v
            else:
                m, v = self.state.setdefault(key, (np.zeros_like(p), np.zeros_like(p)))
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                mh = m / (1 - self.beta1 ** self.t)
                vh = v / (1 - self.beta2 ** self.t)
                p -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _param_grads(net, grads, l2):
    out = {}
    for name, layer in net.layers:
        gb = grads[name]
        out[f"{name}.weights"] = gb.grad_weights + (2.0 * l2 * layer.weights if l2 else 0.0)
        out[f"{name}.bias"] = gb.grad_bias
    return out


def loss_and_grads(net, batch, target, l2=0.0, rng=None, train=True):
    """Penalised MSE of one batch and its parameter gradients."""
    pred, cache = net.forward(batch, train=train, rng=rng)
    loss, g = mse_loss(pred, target)
    if l2:
        loss += l2 * sum(float(np.sum(layer.weights ** 2)) for _, layer in net.layers)
    return loss, _param_grads(net, net.backward(cache, g), l2)


def _eval_mse(net, ds, batch_size=256):
    n = len(ds)
    tot = 0.0
    for s in range(0, n, batch_size):
        idx = np.arange(s, min(n, s + batch_size))
        pred = net.predict_batch(gather_inputs(net, ds, idx))
        tot += float(np.sum((pred - ds.Y[idx]) ** 2))
    return tot / (n * np.prod(ds.Y.shape[1:]))


def train(m: TrainedModel, ds: DemandDataset, opts: TrainOptions | None = None, val: DemandDataset | None = None,
          callback=None) -> TrainedModel:
    """Minibatch training of ``m`` in place; returns ``m`` restored to its best validation epoch.

    ``ds`` must carry split labels (or pass ``val`` explicitly).  History
    entry 0 records the untrained losses; patience counts epochs from 1.
    Training also stops once the validation loss reaches exactly zero.
    """
    opts = opts or TrainOptions()
    if val is None:
        if ds.split is None:
            raise ValueError("training needs a split dataset")
        tr, va = ds.part("train"), ds.part("val")
    else:
        tr, va = ds, val
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("train and validation parts must be non-empty")
    net, spec = m.network, m.spec
    rng = np.random.default_rng(opts.seed)
    optim = Optimizer(spec.optimizer, spec.learning_rate)
    params = net.parameters()
    history = [{"epoch": 0, "train_loss": _eval_mse(net, tr), "val_loss": _eval_mse(net, va)}]
    best = None
    best_params = None
    bad = 0
    n = len(tr)
    for epoch in range(1, opts.max_epochs + 1):
        order = rng.permutation(n)
        tot, cnt = 0.0, 0
        for s in range(0, n, spec.batch_size):
            idx = order[s: s + spec.batch_size]
            batch = gather_inputs(net, tr, idx)
            loss, grads = loss_and_grads(net, batch, tr.Y[idx], spec.l2, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            optim.step(params, grads)
            tot += loss * len(idx)
            cnt += len(idx)
        vl = _eval_mse(net, va)
        if not np.isfinite(vl):
            raise TrainingDiverged(epoch)
        history.append({"epoch": epoch, "train_loss": tot / cnt, "val_loss": vl})
        if callback is not None:
            callback(history[-1])
        if best is None or vl < best:
            best, bad = vl, 0
            best_params = {k: v.copy() for k, v in params}
            m.best_epoch = epoch
        else:
            bad += 1
        if bad >= opts.patience or best == 0.0:
            break
    net.set_parameters(best_params)
    m.history = history
    m.scaler = ds.scaler
    return m


def predict(m: TrainedModel, x) -> np.ndarray:
    """Deterministic forward pass in model units.

    ``x`` is a :class:`DemandDataset` (returns (N, q, p)) or a batch dict
    from :func:`gather_inputs`.
    """
    net = m.network
    if isinstance(x, DemandDataset):
        n = len(x)
        out = np.empty((n,) + tuple(net.grid))
        for s in range(0, n, 256):
            idx = np.arange(s, min(n, s + 256))
            out[idx] = net.predict_batch(gather_inputs(net, x, idx))
        return out
    if not isinstance(x, dict) or "X3D" not in x:
        raise ShapeError("predict expects a dataset or a batch dict")
    return net.predict_batch(x)


def predict_demand(m: TrainedModel, ds: DemandDataset) -> np.ndarray:
    """Predictions mapped back to counts (when a scaler is attached) and clamped at 0."""
    y = predict(m, ds)
    if m.scaler is not None:
        y = m.scaler.unscale_target(y, m.schema.demand)
    return np.maximum(y, 0.0)


# -- persistence ---------------------------------------------------------------

def save_model(m: TrainedModel, directory):
    """``model.json`` manifest plus ``weights.bin`` (tensors concatenated in manifest order)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for key, arr in m.network.parameters():
        b = tensor_to_bytes(arr)
        entries.append({"name": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    manifest = {
        "format": "emsforecast-model/1",
        "spec": m.spec.to_dict(),
        "schema": m.schema.to_dict(),
        "schema_hash": schema_hash(m.schema),
        "param_count": count_params(m),
        "history": m.history,
        "best_epoch": m.best_epoch,
        "scaler": None if m.scaler is None else m.scaler.to_dict(),
        "metrics": m.metrics,
        "weights": entries,
    }
    atomic_write(d / "weights.bin", b"".join(blobs), "wb")
    atomic_write(d / "model.json", json.dumps(manifest, indent=1, sort_keys=True))
    return d


def load_model(directory) -> TrainedModel:
    d = Path(directory)
    man = json.loads((d / "model.json").read_text())
    if man.get("format") != "emsforecast-model/1":
        raise ValueError(f"{d}: unsupported model format {man.get('format')!r}")
    spec = ModelSpec.from_dict(man["spec"])
    schema = FeatureSchema.from_dict(man["schema"])
    if schema_hash(schema) != man["schema_hash"]:
        raise ValueError(f"{d}: schema hash mismatch")
    m = TrainedModel(spec, schema, build_network(spec, schema, 0), man["history"],
                     None if man["scaler"] is None else Scaler.from_dict(man["scaler"]), man["best_epoch"],
                     man.get("metrics", {}))
    raw = (d / "weights.bin").read_bytes()
    vals = {e["name"]: tensor_from_bytes(raw[e["offset"]: e["offset"] + e["nbytes"]], e["shape"])
            for e in man["weights"]}
    m.network.set_parameters(vals)
    return m
