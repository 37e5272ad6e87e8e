"""Binning, windowing, time encodings, scaling, pruning and splitting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from ..errors import InsufficientHistory, SpecError
from .core import DEMAND, GRANULARITIES, DemandDataset, Externals, FeatureSchema, FeatureSpec, _utc

__all__ = [
    "check_granularity",
    "interval_starts",
    "bin_incidents",
    "one_hot_time",
    "default_schema",
    "window_instances",
    "Scaler",
    "fit_scaler",
    "apply_scaler",
    "unscale",
    "PruneResult",
    "correlation_prune",
    "prune_dataset",
    "chronological_split",
    "daily_to_intervals",
    "events_to_maps",
    "holidays_to_flags",
]


def check_granularity(granularity):
    g = int(granularity)
    if g != granularity or g not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES} hours, got {granularity}")
    return g


def _n_intervals(start, end, granularity):
    span = (_utc(end) - _utc(start)).total_seconds()
    step = granularity * 3600
    if span < step:
        raise ValueError(f"time range [{start}, {end}) covers no {granularity}-hour interval")
    return int(span // step)


def interval_starts(start, n, granularity):
    """``datetime64[s]`` start times of ``n`` consecutive intervals."""
    s = np.datetime64(_utc(start).replace(tzinfo=None), "s")
    return s + np.arange(n) * np.timedelta64(granularity * 3600, "s")


def bin_incidents(records, grid, granularity, start, end, return_dropped=False):
    """Count records per half-open cell and half-open interval -> (q, p, T).

    A trailing partial interval is discarded.  Records outside the box or the
    range are dropped; a warning reports how many.
    """
    g = check_granularity(granularity)
    T = _n_intervals(start, end, g)
    t0 = _utc(start)
    cube = np.zeros((grid.q, grid.p, T))
    records = list(records)
    if not records:
        return (cube, 0) if return_dropped else cube
    lat = np.array([r.latitude for r in records], dtype=float)
    lon = np.array([r.longitude for r in records], dtype=float)
    secs = np.array([(r.timestamp - t0).total_seconds() for r in records])
    t = np.floor(secs / (g * 3600)).astype(np.int64)
    i, j = grid.cells(lat, lon)
    ok = (i >= 0) & (t >= 0) & (t < T)
    np.add.at(cube, (i[ok], j[ok], t[ok]), 1.0)
    dropped = int((~ok).sum())
    if dropped:
        warnings.warn(f"dropped {dropped} of {len(records)} records outside the grid box or time range",
                      stacklevel=2)
    return (cube, dropped) if return_dropped else cube


def one_hot_time(timestamp, granularity):
    """One-hot hour slot (width 24/g), weekday (Monday = 0) and month of a timestamp."""
    g = check_granularity(granularity)
    ts = _utc(timestamp) if not isinstance(timestamp, np.datetime64) else \
        datetime.fromtimestamp(timestamp.astype("datetime64[s]").astype(np.int64), tz=timezone.utc)
    out = {"hour_slot": np.zeros(24 // g), "weekday": np.zeros(7), "month": np.zeros(12)}
    out["hour_slot"][ts.hour // g] = 1.0
    out["weekday"][ts.weekday()] = 1.0
    out["month"][ts.month - 1] = 1.0
    return out


def _one_hot_many(times, granularity):
    # vectorised variant for datetime64[s] arrays
    secs = times.astype("datetime64[s]").astype(np.int64)
    hour = (secs // 3600) % 24
    days = secs // 86400
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    months = times.astype("datetime64[M]").astype(np.int64) % 12
    eye = lambda k, idx: np.eye(k)[idx]
    return {"hour_slot": eye(24 // granularity, hour // granularity), "weekday": eye(7, weekday),
            "month": eye(12, months)}


def default_schema(externals=None, granularity=8, look_back=6, upsample=True):
    """Schema derived from available externals.

    Every weather column yields a look-back history (upsampled 1-D series)
    and a scalar for the target period; event maps are 2-D; holiday flags
    and the three time one-hots complete the set.
    """
    ext = externals or Externals()
    feats = [FeatureSpec(DEMAND, "3D")]
    for name in ext.maps:
        feats.append(FeatureSpec(name, "2D", source=(name,)))
    for name in ext.series:
        feats.append(FeatureSpec(f"{name}_hist", "1D_timeseries", upsample=upsample, source=(name,),
                                 width=look_back))
    feats.append(FeatureSpec("hour_slot", "1D_onehot", width=24 // granularity))
    feats.append(FeatureSpec("weekday", "1D_onehot", width=7))
    feats.append(FeatureSpec("month", "1D_onehot", width=12))
    for name in ext.series:
        feats.append(FeatureSpec(name, "scalar", source=(name,)))
    for name in ext.flags:
        feats.append(FeatureSpec(name, "scalar", source=(name,)))
    return FeatureSchema(tuple(feats))


def window_instances(cube, externals=None, look_back=6, granularity=8, start=None, schema=None):
    """One instance per target t in [L, T) with the L preceding slices as X3D."""
    cube = np.asarray(cube, dtype=float)
    if cube.ndim != 3:
        raise ValueError(f"cube must be (q, p, T), got shape {cube.shape}")
    g = check_granularity(granularity)
    L = int(look_back)
    if L < 1:
        raise ValueError("look-back must be >= 1")
    T = cube.shape[2]
    if T <= L:
        raise InsufficientHistory(f"cube has {T} intervals, need more than the look-back {L}")
    ext = externals or Externals()
    for group in (ext.series, ext.flags, ext.maps):
        for k, v in group.items():
            if len(v) != T:
                raise ValueError(f"external {k!r} has {len(v)} intervals, cube has {T}")
    schema = schema or default_schema(ext, g, L)
    schema.check_widths(g, L)
    start = start if start is not None else datetime(2000, 1, 3, tzinfo=timezone.utc)
    t = np.arange(L, T)
    lags = t[:, None] - L + np.arange(L)[None, :]
    X3D = np.ascontiguousarray(np.transpose(cube[:, :, lags], (2, 0, 1, 3)))
    Y = np.ascontiguousarray(np.transpose(cube[:, :, t], (2, 0, 1)))
    times = interval_starts(start, T, g)[t]
    onehot_all = _one_hot_many(times, g)
    maps2d, series, onehots, scalars = {}, {}, {}, {}
    for f in schema.features:
        src = f.source[0] if f.source else f.name
        if f.type == "2D":
            maps2d[f.name] = np.asarray(ext.maps[src], dtype=float)[t]
        elif f.type == "1D_timeseries":
            series[f.name] = np.asarray(ext.series[src], dtype=float)[lags]
        elif f.type == "1D_onehot":
            onehots[f.name] = onehot_all[src]
        elif f.type == "scalar":
            arr = ext.series.get(src, ext.flags.get(src))
            if arr is None:
                raise SpecError(f"no external column {src!r} for scalar feature {f.name!r}")
            scalars[f.name] = np.asarray(arr, dtype=float)[t]
    return DemandDataset(X3D, Y, maps2d, series, onehots, scalars, times, t, g, L, schema)


# -- external alignment ------------------------------------------------------

def daily_to_intervals(daily, start, n, granularity):
    """Expand per-day values ({date: {col: value}}) onto interval starts.

    Days missing from the table take the previous available day's value.
    """
    times = interval_starts(start, n, granularity).astype("datetime64[D]")
    days = sorted(daily)
    if not days:
        return {}
    cols = list(daily[days[0]])
    keys = np.array([np.datetime64(d, "D") for d in days])
    pos = np.clip(np.searchsorted(keys, times, side="right") - 1, 0, len(keys) - 1)
    out = {}
    for c in cols:
        vals = np.array([float(daily[d][c]) for d in days])
        out[c] = vals[pos]
    return out


def events_to_maps(events, grid, start, n, granularity, name="events"):
    """Sum expected participants per cell and interval -> {name: (T, q, p)}."""
    g = check_granularity(granularity)
    t0 = _utc(start)
    m = np.zeros((n, grid.q, grid.p))
    if events:
        lat = np.array([e[1] for e in events], dtype=float)
        lon = np.array([e[2] for e in events], dtype=float)
        w = np.array([e[3] for e in events], dtype=float)
        t = np.floor(np.array([(_utc(e[0]) - t0).total_seconds() for e in events]) / (g * 3600)).astype(np.int64)
        i, j = grid.cells(lat, lon)
        ok = (i >= 0) & (t >= 0) & (t < n)
        np.add.at(m, (t[ok], i[ok], j[ok]), w[ok])
    return {name: m}


def holidays_to_flags(holidays, start, n, granularity):
    """Binary per-interval indicator per holiday kind; ``holidays`` is [(date, kind)]."""
    days = interval_starts(start, n, granularity).astype("datetime64[D]")
    kinds = sorted({k for _, k in holidays})
    out = {}
    for k in kinds:
        marked = np.array(sorted({np.datetime64(d, "D") for d, kk in holidays if kk == k}))
        out[f"holiday_{k}"] = np.isin(days, marked).astype(float)
    return out


# -- scaling -----------------------------------------------------------------

@dataclass
class Scaler:
    """Per-feature min/max fitted on the training split.

    Values from other splits may fall outside [0, 1]; a constant feature
    maps to 0.  Targets share the demand feature's range.
    """

    ranges: dict = field(default_factory=dict)

    def _map(self, name, x):
        lo, hi = self.ranges[name]
        if hi == lo:
            return np.zeros_like(x, dtype=float)
        return (x - lo) / (hi - lo)

    def _inv(self, name, x):
        lo, hi = self.ranges[name]
        return x * (hi - lo) + lo

    def transform(self, ds: DemandDataset) -> DemandDataset:
        d = ds.schema.demand
        sel = lambda g: {k: self._map(k, v) for k, v in g.items()}
        return replace(ds, X3D=self._map(d, ds.X3D), Y=self._map(d, ds.Y), maps2d=sel(ds.maps2d),
                       series=sel(ds.series), onehots=sel(ds.onehots), scalars=sel(ds.scalars), scaler=self)

    def unscale_target(self, y, demand=DEMAND):
        return self._inv(demand, np.asarray(y, dtype=float))

    def to_dict(self):
        return {k: [float(a), float(b)] for k, (a, b) in self.ranges.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def fit_scaler(train: DemandDataset) -> Scaler:
    """Min/max per feature from ``train`` only; demand covers both windows and targets."""
    if train.split is not None and np.any(train.split != "train"):
        raise ValueError("fit_scaler expects train-split instances only")
    rng = lambda a: (float(np.min(a)), float(np.max(a)))
    d = train.schema.demand
    ranges = {d: (min(train.X3D.min(), train.Y.min()), max(train.X3D.max(), train.Y.max()))}
    for g in (train.maps2d, train.series, train.onehots, train.scalars):
        for k, v in g.items():
            ranges[k] = rng(v)
    return Scaler({k: (float(a), float(b)) for k, (a, b) in ranges.items()})


def apply_scaler(scaler: Scaler, ds: DemandDataset) -> DemandDataset:
    return scaler.transform(ds)


def unscale(scaler: Scaler, y, demand=DEMAND):
    return scaler.unscale_target(y, demand)


# -- correlation pruning -----------------------------------------------------

@dataclass
class PruneResult:
    kept: list
    dropped: list
    corr: np.ndarray
    names: list
    flagged: list = field(default_factory=list)
    dropped_by: dict = field(default_factory=dict)


def correlation_prune(matrix, names=None, threshold=0.8):
    """Greedy schema-order pruning on Pearson |rho| > ``threshold``.

    A later column is dropped when it correlates above the threshold with a
    column that has already been kept.  Zero-variance columns correlate 0
    with everything and are reported in ``flagged``.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("correlation_prune needs a (samples >= 2, features) matrix")
    names = list(names) if names is not None else [f"f{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("names do not match the number of columns")
    Xc = X - X.mean(axis=0)
    sd = np.sqrt((Xc ** 2).sum(axis=0))
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    Z = np.where(flat, 0.0, Xc / np.where(flat, 1.0, sd))
    corr = np.clip(Z.T @ Z, -1.0, 1.0)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    kept, dropped, by = [], [], {}
    for c in range(X.shape[1]):
        hit = next((k for k in kept if abs(corr[c, k]) > threshold), None)
        if hit is None:
            kept.append(c)
        else:
            dropped.append(c)
            by[names[c]] = names[hit]
    return PruneResult([names[k] for k in kept], [names[k] for k in dropped], corr, names,
                       [names[k] for k in np.nonzero(flat)[0]], by)


def prune_dataset(ds: DemandDataset, threshold=0.8, externals=None):
    """Prune external source columns by their correlation on the train split.

    Correlations come from the per-instance target-period values of each
    weather column; a dropped column removes both its history and scalar.
    """
    train = ds.part("train") if ds.split is not None else ds
    cols, names = [], []
    for k, v in train.scalars.items():
        if not k.startswith("holiday_"):
            cols.append(v)
            names.append(k)
    if not cols:
        return ds, PruneResult([], [], np.zeros((0, 0)), [])
    res = correlation_prune(np.column_stack(cols), names, threshold)
    drop = set(res.dropped)
    keep = [f.name for f in ds.schema.optional()
            if not (f.source and f.source[0] in drop) and f.name not in drop]
    return ds.restrict(keep), res


# -- splitting ---------------------------------------------------------------

def chronological_split(ds: DemandDataset, fractions=(0.6, 0.2, 0.2)) -> DemandDataset:
    """Contiguous train/val/test blocks; boundaries are floors of cumulative fractions."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f <= 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    order = np.argsort(ds.t_index, kind="stable")
    if not np.array_equal(order, np.arange(len(ds))):
        ds = ds.take(order)
    n = len(ds)
    b1 = math.floor(n * fr[0] + 1e-9)
    b2 = math.floor(n * (fr[0] + fr[1]) + 1e-9)
    sizes = (b1, b2 - b1, n - b2)
    if min(sizes) < 1:
        raise ValueError(f"split of {n} instances by {tuple(fr)} leaves an empty part {sizes}")
    labels = np.empty(n, dtype="<U5")
    labels[:b1], labels[b1:b2], labels[b2:] = "train", "val", "test"
    return replace(ds, split=labels)
