"""Permutation-sampling Shapley values against a background distribution.

The value of a coalition S is the expected output when features in S take
the explained instance's values and the others take a background sample's
values.  The base value is the mean output over the background, so the
attributions add up to f(x) - base (exactly under full enumeration).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["AttributionConfig", "ShapleyResult", "shapley_values", "shapley_attribution", "model_value_function",
           "model_attribution",
           "feature_table"]


@dataclass
class AttributionConfig:
    background_size: int = 300
    sample_size: int = 50
    permutations: int = 100
    seed: int = 0
    exhaustive_max: int = 6     # enumerate all orderings up to this many features

    def __post_init__(self):
        if min(self.background_size, self.sample_size, self.permutations) < 1:
            raise ValueError("attribution sizes must be >= 1")


@dataclass
class ShapleyResult:
    names: list
    phi: np.ndarray
    stderr: np.ndarray
    base: float
    fx: float
    exhaustive: bool
    n_samples: int

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.names, self.phi)}


def shapley_values(f, d, n_background, names=None, permutations=None, rng=None, exhaustive=None,
                   exhaustive_max=6):
    """Shapley values of a coalition model.

    ``f(masks, bg)`` evaluates hybrids: ``masks`` is a boolean (H, d) array
    selecting instance values and ``bg`` the background row of each hybrid;
    it returns (H,) outputs.  Enumeration covers every ordering paired with
    every background row; sampling draws (ordering, background row) pairs.
    """
    names = list(names) if names is not None else [f"x{i}" for i in range(d)]
    if n_background < 1:
        raise ValueError("empty background set")
    rng = np.random.default_rng(rng)
    if exhaustive is None:
        exhaustive = d <= exhaustive_max and math.factorial(d) * n_background <= 200_000
    base = float(np.mean(f(np.zeros((n_background, d), bool), np.arange(n_background))))
    fx = float(f(np.ones((1, d), bool), np.zeros(1, dtype=np.int64))[0])
    if d == 0:
        return ShapleyResult(names, np.zeros(0), np.zeros(0), base, fx, True, 0)

    if exhaustive:
        perms = np.array(list(itertools.permutations(range(d))))
        pairs = [(p, b) for p in perms for b in range(n_background)]
    else:
        n = int(permutations or 100)
        pairs = [(rng.permutation(d), int(rng.integers(n_background))) for _ in range(n)]
    contrib = np.empty((len(pairs), d))
    step = max(1, 4096 // (d + 1))
    for s in range(0, len(pairs), step):
        chunk = pairs[s: s + step]
        masks = np.zeros((len(chunk), d + 1, d), bool)
        for c, (perm, _) in enumerate(chunk):
            for k in range(1, d + 1):
                masks[c, k, perm[:k]] = True
        bg = np.repeat([b for _, b in chunk], d + 1)
        out = np.asarray(f(masks.reshape(-1, d), bg), dtype=float).reshape(len(chunk), d + 1)
        diffs = np.diff(out, axis=1)
        for c, (perm, _) in enumerate(chunk):
            contrib[s + c, perm] = diffs[c]
    phi = contrib.mean(axis=0)
    se = np.zeros(d) if exhaustive else contrib.std(axis=0, ddof=1) / np.sqrt(len(pairs)) if len(pairs) > 1 \
        else np.full(d, np.inf)
    return ShapleyResult(names, phi, se, base, fx, bool(exhaustive), len(pairs))


def model_value_function(predict_fn, instance, background, cell=None):
    """Adapter from a batched predictor to the coalition interface.

    ``instance`` maps feature name -> array (one row); ``background`` maps
    name -> (N, ...) arrays.  ``predict_fn`` takes such a dict of batched
    arrays and returns (B, q, p) heatmaps; the scalar target is their sum,
    or one ``cell`` when given.
    """
    names = list(instance)

    def f(masks, bg):
        batch = {}
        for j, n in enumerate(names):
            inst = np.asarray(instance[n])
            b = np.asarray(background[n])[bg]
            sel = masks[:, j].reshape((-1,) + (1,) * inst.ndim)
            batch[n] = np.where(sel, inst[None], b)
        out = np.asarray(predict_fn(batch), dtype=float)
        if cell is not None:
            return out[:, cell[0], cell[1]]
        return out.reshape(len(out), -1).sum(axis=1)

    return f, names


def shapley_attribution(predict_fn, instance, background, config: AttributionConfig | None = None, cell=None):
    """Attribution of one instance; exhaustive when the feature count is small."""
    cfg = config or AttributionConfig()
    n_bg = len(next(iter(background.values()))) if background else 0
    if n_bg == 0:
        raise ValueError("empty background set")
    f, names = model_value_function(predict_fn, instance, background, cell)
    return shapley_values(f, len(names), n_bg, names, cfg.permutations, cfg.seed, exhaustive_max=cfg.exhaustive_max)


def feature_table(results):
    """Pool several instances: mean signed and mean absolute value per feature."""
    results = list(results)
    names = results[0].names
    phis = np.stack([r.phi for r in results])
    rows = [{"feature": n, "mean_phi": float(phis[:, j].mean()), "mean_abs_phi": float(np.abs(phis[:, j]).mean())}
            for j, n in enumerate(names)]
    return sorted(rows, key=lambda r: -r["mean_abs_phi"])


def _model_features(m):
    net = m.network
    return [m.schema.demand] + [n for grp in ("up", "maps", "flat") for n in net.groups[grp]]


def model_attribution(m, ds, config: AttributionConfig | None = None, cell=None):
    """Attribute test-split predictions of a trained model to its input features.

    The background is drawn from the train split and the explained instances
    from the test split (the whole dataset when it has no split).  Each
    instance uses its own seed spawned from ``config.seed``.  Returns
    ``(results, table)``.
    """
    from dataclasses import replace as _replace
    from ..model.training import predict

    cfg = config or AttributionConfig()
    rng = np.random.default_rng(cfg.seed)
    train = ds.part("train") if ds.split is not None else ds
    test = ds.part("test") if ds.split is not None else ds
    if len(train) == 0:
        raise ValueError("empty background set")
    bg = train.take(np.sort(rng.choice(len(train), min(cfg.background_size, len(train)), replace=False)))
    picks = np.sort(rng.choice(len(test), min(cfg.sample_size, len(test)), replace=False))
    names = _model_features(m)
    background = {n: bg.feature(n) for n in names}
    groups = {n: g for g in ("maps2d", "series", "onehots", "scalars") for n in getattr(ds, g)}

    def predict_fn(batch):
        B = len(batch[names[0]])
        fields = {g: {} for g in ("maps2d", "series", "onehots", "scalars")}
        for n in names[1:]:
            fields[groups[n]][n] = batch[n]
        tmpl = _replace(ds, X3D=batch[names[0]], Y=np.zeros((B,) + tuple(ds.grid_shape)), times=ds.times[:1].repeat(B),
                        t_index=np.zeros(B, dtype=np.int64), split=None, **fields)
        return predict(m, tmpl)

    seeds = np.random.SeedSequence(cfg.seed).spawn(len(picks))
    results = []
    for k, i in enumerate(picks):
        inst = {n: test.feature(n)[i] for n in names}
        f, _ = model_value_function(predict_fn, inst, background, cell)
        results.append(shapley_values(f, len(names), len(bg), names, cfg.permutations,
                                      np.random.default_rng(seeds[k]), exhaustive_max=cfg.exhaustive_max))
    return results, feature_table(results)
