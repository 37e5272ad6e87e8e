"""CNN and per-subregion MLP assembled from layers, with exact backprop."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, SpecError
from ..layers import Conv3D, Dense, LocallyConnected2D, TemporalFusion, TransposedConv3D

__all__ = ["Network", "build_network", "gather_inputs"]


def _selected(spec, schema):
    feats = [f for f in schema.optional() if spec.uses(f.name)]
    unknown = set(spec.feature_mask) - set(schema.names)
    if unknown:
        raise SpecError(f"feature mask names unknown features {sorted(unknown)}")
    groups = {
        "up": [f.name for f in feats if f.type == "1D_timeseries" and f.upsample],
        "maps": [f.name for f in feats if f.type == "2D"],
        "flat": [f.name for f in feats if f.type in ("1D_onehot", "scalar")
                 or (f.type == "1D_timeseries" and not f.upsample)],
    }
    return groups


def gather_inputs(net, ds, idx=None):
    """Batch arrays for ``net`` from a dataset; only the selected features are read."""
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    q, p = net.grid
    if ds.X3D.shape[1:] != (q, p, net.look_back):
        raise ShapeError(f"dataset windows {ds.X3D.shape[1:]} do not match the model's {(q, p, net.look_back)}")

    def fetch(name):
        try:
            return ds.feature(name)[idx]
        except KeyError:
            raise ShapeError(f"dataset lacks feature {name!r} required by the model") from None

    B = len(idx)
    batch = {"X3D": ds.X3D[idx]}
    batch["up"] = np.stack([fetch(n) for n in net.groups["up"]], axis=1) if net.groups["up"] else None
    batch["maps"] = np.stack([fetch(n) for n in net.groups["maps"]], axis=1) if net.groups["maps"] else None
    flat = [fetch(n).reshape(B, -1) for n in net.groups["flat"]]
    batch["flat"] = np.concatenate(flat, axis=1) if flat else None
    if batch["up"] is not None and batch["up"].shape[2] != net.look_back:
        raise ShapeError("upsampled series length differs from the look-back")
    return batch


class Network:
    """Layer container with ``forward`` / ``backward`` over a batch dict."""

    def __init__(self, spec, schema, rng=None):
        rng = np.random.default_rng(rng)
        self.spec = spec
        self.kind = spec.kind
        self.grid = spec.grid
        self.look_back = spec.look_back
        self.groups = _selected(spec, schema)
        self.schema_names = set(sum(self.groups.values(), []))
        self.flat_width = self._flat_width(schema)
        self.layers = []  # (name, layer) in forward order
        if self.kind == "cnn":
            self._build_cnn(schema, rng)
        else:
            self._build_mlp(schema, rng)

    # -- assembly ---------------------------------------------------------

    def _flat_width(self, schema):
        q, p = self.grid
        w = 0
        for n in self.groups["flat"]:
            f = schema[n]
            if f.type == "scalar":
                w += 1
            elif f.type == "1D_timeseries":
                w += self.look_back
            else:
                if f.width is None:
                    raise SpecError(f"one-hot {n!r} needs a declared width")
                w += f.width
        return w

    def _add(self, name, layer):
        self.layers.append((name, layer))
        return layer

    def _build_cnn(self, schema, rng):
        s, (q, p), L = self.spec, self.grid, self.look_back
        maps = 1
        for k, c in enumerate(s.conv):
            self._add(f"conv{k}", Conv3D.init(maps, c["filters"], c["kernel"], 1, "same", c["activation"], rng=rng))
            maps = c["filters"]
        if self.groups["up"]:
            tconv = s.tconv or [{"filters": len(self.groups["up"]), "activation": "identity"}]
            m = len(self.groups["up"])
            for k, c in enumerate(tconv):
                kern = (q, p, 1) if k == 0 else (1, 1, 1)
                self._add(f"tconv{k}", TransposedConv3D.init(m, c["filters"], kern, 1, c["activation"], rng=rng))
                m = c["filters"]
            maps += m
        f = s.fusion
        self._add("fusion", TemporalFusion.init(maps, f["filters"], L, f["activation"], rng=rng))
        maps = f["filters"] + len(self.groups["maps"])
        lc = s.local
        self._add("local", LocallyConnected2D.init(maps, lc["filters"], lc["kernel"], (q, p), 1, "same",
                                                   lc["activation"], rng=rng))
        width = lc["filters"] * q * p + self.flat_width
        for k, w in enumerate(s.dense):
            self._add(f"dense{k}", Dense.init(width, w, s.dense_activation, rng=rng))
            width = w
        self._add("out", Dense.init(width, q * p, "identity", rng=rng))

    def _build_mlp(self, schema, rng):
        s = self.spec
        width = self.mlp_input_width
        for k, w in enumerate(x for x in s.dense if x > 0):
            self._add(f"dense{k}", Dense.init(width, w, s.dense_activation, rng=rng))
            width = w
        self._add("out", Dense.init(width, 1, "identity", rng=rng))

    @property
    def mlp_input_width(self):
        q, p = self.grid
        L = self.look_back
        return L + len(self.groups["maps"]) + len(self.groups["up"]) * L + self.flat_width + q * p

    def layer(self, name):
        return dict(self.layers)[name]

    def param_count(self) -> int:
        return int(sum(layer.param_count() for _, layer in self.layers))

    def parameters(self):
        """(key, array) pairs; arrays are the live layer tensors."""
        out = []
        for name, layer in self.layers:
            out.append((f"{name}.weights", layer.weights))
            out.append((f"{name}.bias", layer.bias))
        return out

    def set_parameters(self, values):
        for name, layer in self.layers:
            w = values[f"{name}.weights"]
            b = values[f"{name}.bias"]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"parameter shapes for {name!r} do not match the architecture")
            layer.weights = np.array(w, dtype=float)
            layer.bias = np.array(b, dtype=float)

    # -- forward / backward -------------------------------------------------

    @staticmethod
    def _dropout(x, rate, rng, ctx):
        if rate <= 0 or rng is None:
            ctx.append(None)
            return x
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
        ctx.append(keep)
        return x * keep

    def _dense_chain(self, h, train, rng, cache):
        rate = self.spec.dropout if train else 0.0
        names = [n for n, _ in self.layers if n.startswith("dense")] + ["out"]
        for n in names:
            h = self._dropout(h, rate, rng, cache["drop"])
            h, ctx = self.layer(n).forward_train(h)
            cache["dense"].append((n, ctx))
        return h

    def _dense_back(self, cache, g, grads):
        for (n, ctx), keep in zip(reversed(cache["dense"]), reversed(cache["drop"])):
            gb = self.layer(n).backward(ctx, g)
            grads[n] = gb
            g = gb.grad_input if keep is None else gb.grad_input * keep
        return g

    def mlp_rows(self, batch):
        X3 = batch["X3D"]
        B, q, p, L = X3.shape
        parts = [X3.reshape(B, q * p, L)]
        if batch["maps"] is not None:
            parts.append(batch["maps"].reshape(B, -1, q * p).transpose(0, 2, 1))
        shared = []
        if batch["up"] is not None:
            shared.append(batch["up"].reshape(B, -1))
        if batch["flat"] is not None:
            shared.append(batch["flat"])
        if shared:
            sh = np.concatenate(shared, axis=1)
            parts.append(np.broadcast_to(sh[:, None, :], (B, q * p, sh.shape[1])))
        parts.append(np.broadcast_to(np.eye(q * p)[None], (B, q * p, q * p)))
        return np.concatenate(parts, axis=2).reshape(B * q * p, -1)

    def forward(self, batch, train=False, rng=None):
        """Return ``(Y_hat (B, q, p), cache)``; dropout only when ``train``."""
        q, p = self.grid
        cache = {"dense": [], "drop": []}
        if self.kind == "mlp":
            rows = self.mlp_rows(batch)
            out = self._dense_chain(rows, train, rng, cache)
            B = batch["X3D"].shape[0]
            return out.reshape(B, q, p), cache
        x = batch["X3D"][:, None]
        cache["conv"] = []
        for n, layer in self.layers:
            if n.startswith("conv"):
                x, ctx = layer.forward_train(x)
                cache["conv"].append((n, ctx))
        parts = [x]
        cache["tconv"] = []
        if batch["up"] is not None:
            u = batch["up"][:, :, None, None, :]
            for n, layer in self.layers:
                if n.startswith("tconv"):
                    u, ctx = layer.forward_train(u)
                    cache["tconv"].append((n, ctx))
            parts.append(u)
        cache["split"] = [t.shape[1] for t in parts]
        h = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
        h, cache["fusion"] = self.layer("fusion").forward_train(h)
        cache["fused_maps"] = h.shape[1]
        if batch["maps"] is not None:
            h = np.concatenate([h, batch["maps"]], axis=1)
        h, cache["local"] = self.layer("local").forward_train(h)
        B = h.shape[0]
        cache["local_shape"] = h.shape
        h = h.reshape(B, -1)
        if batch["flat"] is not None:
            h = np.concatenate([h, batch["flat"]], axis=1)
        out = self._dense_chain(h, train, rng, cache)
        return out.reshape(B, q, p), cache

    def backward(self, cache, grad_out):
        """Gradients of sum(grad_out * Y_hat) per layer name -> GradientBundle."""
        grads = {}
        B = grad_out.shape[0]
        if self.kind == "mlp":
            self._dense_back(cache, grad_out.reshape(-1, 1), grads)
            return grads
        g = self._dense_back(cache, grad_out.reshape(B, -1), grads)
        n_local = int(np.prod(cache["local_shape"][1:]))
        g = g[:, :n_local].reshape(cache["local_shape"])
        gb = self.layer("local").backward(cache["local"], g)
        grads["local"] = gb
        g = gb.grad_input[:, : cache["fused_maps"]]
        gb = self.layer("fusion").backward(cache["fusion"], g)
        grads["fusion"] = gb
        g = gb.grad_input
        c_maps = cache["split"][0]
        if cache["tconv"]:
            gu = g[:, c_maps:]
            for n, ctx in reversed(cache["tconv"]):
                b = self.layer(n).backward(ctx, gu)
                grads[n] = b
                gu = b.grad_input
        gc = g[:, :c_maps]
        for n, ctx in reversed(cache["conv"]):
            b = self.layer(n).backward(ctx, gc)
            grads[n] = b
            gc = b.grad_input
        return grads

    def predict_batch(self, batch):
        return self.forward(batch, train=False)[0]


def build_network(spec, schema, rng=None) -> Network:
    return Network(spec, schema, rng)
