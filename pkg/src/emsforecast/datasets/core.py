"""Records, grid geometry, feature schema and the columnar dataset container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from ..errors import SpecError

__all__ = [
    "IncidentRecord",
    "GridSpec",
    "FeatureSpec",
    "FeatureSchema",
    "Externals",
    "DemandDataset",
    "FEATURE_TYPES",
    "GRANULARITIES",
    "DEMAND",
]

FEATURE_TYPES = ("3D", "2D", "1D_timeseries", "1D_onehot", "scalar")
GRANULARITIES = (2, 4, 8, 12, 24)
DEMAND = "demand"


def _utc(ts) -> datetime:
    if isinstance(ts, str):
        ts = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class IncidentRecord:
    timestamp: datetime
    latitude: float
    longitude: float
    category: str = ""

    def __post_init__(self):
        object.__setattr__(self, "timestamp", _utc(self.timestamp))
        if not (math.isfinite(self.latitude) and math.isfinite(self.longitude)):
            raise ValueError(f"non-finite coordinates ({self.latitude}, {self.longitude})")


@dataclass(frozen=True)
class GridSpec:
    """``q`` rows along latitude by ``p`` columns along longitude.

    Cells are half-open ``[lo, hi)`` in both coordinates, so a point on an
    interior boundary belongs to the higher-index cell and points on the
    upper edge of the box fall outside.
    """

    q: int
    p: int
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.q < 1 or self.p < 1:
            raise ValueError("grid needs q, p >= 1")
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("degenerate bounding box")

    @property
    def shape(self):
        return (self.q, self.p)

    def cells(self, lat, lon):
        """Cell indices of coordinate arrays; ``-1`` marks points outside the box."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        i = np.floor((lat - self.lat_min) / (self.lat_max - self.lat_min) * self.q).astype(np.int64)
        j = np.floor((lon - self.lon_min) / (self.lon_max - self.lon_min) * self.p).astype(np.int64)
        inside = (lat >= self.lat_min) & (lat < self.lat_max) & (lon >= self.lon_min) & (lon < self.lon_max)
        # guard against rounding pushing an inside point onto the upper index
        i = np.minimum(i, self.q - 1)
        j = np.minimum(j, self.p - 1)
        return np.where(inside, i, -1), np.where(inside, j, -1)

    def cell_bounds(self, i, j):
        dlat = (self.lat_max - self.lat_min) / self.q
        dlon = (self.lon_max - self.lon_min) / self.p
        return (self.lat_min + i * dlat, self.lat_min + (i + 1) * dlat,
                self.lon_min + j * dlon, self.lon_min + (j + 1) * dlon)

    def to_dict(self):
        return {"q": self.q, "p": self.p, "lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    type: str
    upsample: bool = False
    source: tuple = ()
    width: int | None = None

    def __post_init__(self):
        if self.type not in FEATURE_TYPES:
            raise SpecError(f"feature {self.name!r}: unknown type {self.type!r}")
        if self.upsample and self.type != "1D_timeseries":
            raise SpecError(f"feature {self.name!r}: only 1D time series can be upsampled")
        object.__setattr__(self, "source", tuple(self.source))

    def to_dict(self):
        return {"name": self.name, "type": self.type, "upsample": self.upsample,
                "source": list(self.source), "width": self.width}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["type"], bool(d.get("upsample", False)), tuple(d.get("source", ())), d.get("width"))


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptors; exactly one 3-D feature (the demand history)."""

    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SpecError("duplicate feature names in schema")
        n3 = sum(f.type == "3D" for f in self.features)
        if n3 != 1:
            raise SpecError(f"schema needs exactly one 3D feature, found {n3}")

    @property
    def names(self):
        return [f.name for f in self.features]

    @property
    def demand(self) -> str:
        return next(f.name for f in self.features if f.type == "3D")

    def of_type(self, *types):
        return [f for f in self.features if f.type in types]

    def __getitem__(self, name):
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def optional(self):
        """Features that may be switched off (all but the demand history)."""
        return [f for f in self.features if f.type != "3D"]

    def restrict(self, names) -> "FeatureSchema":
        keep = set(names) | {self.demand}
        return FeatureSchema(tuple(f for f in self.features if f.name in keep))

    def check_widths(self, granularity, look_back):
        expected = {"hour_slot": 24 // granularity, "weekday": 7, "month": 12}
        for f in self.features:
            if f.type == "1D_timeseries" and f.width not in (None, look_back):
                raise SpecError(f"series {f.name!r} has width {f.width}, expected look-back {look_back}")
            if f.type == "1D_onehot" and f.name in expected and f.width not in (None, expected[f.name]):
                raise SpecError(f"one-hot {f.name!r} has width {f.width}, expected {expected[f.name]}")

    def to_dict(self):
        return {"features": [f.to_dict() for f in self.features]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(FeatureSpec.from_dict(f) for f in d["features"]))


@dataclass
class Externals:
    """External inputs aligned with the cube's intervals (length T on axis 0).

    ``series`` values act both as look-back histories and, for the target
    period, as scalar inputs; ``maps`` are per-interval q x p fields (events);
    ``flags`` are per-interval binary indicators (holidays).
    """

    series: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def subset(self, names):
        names = set(names)
        return Externals({k: v for k, v in self.series.items() if k in names},
                         {k: v for k, v in self.maps.items() if k in names},
                         {k: v for k, v in self.flags.items() if k in names})


SPLITS = ("train", "val", "test")


@dataclass
class DemandDataset:
    """Instances stored column-wise.

    X3D: (N, q, p, L) demand of the L intervals before each target.
    maps2d: name -> (N, q, p); series: name -> (N, L); onehots: name -> (N, w);
    scalars: name -> (N,).  Y: (N, q, p) targets.  ``t_index`` is the
    target interval within the source cube and ``times`` its start time.
    """

    X3D: np.ndarray
    Y: np.ndarray
    maps2d: dict
    series: dict
    onehots: dict
    scalars: dict
    times: np.ndarray
    t_index: np.ndarray
    granularity: int
    look_back: int
    schema: FeatureSchema
    split: np.ndarray | None = None
    scaler: object = None

    def __len__(self):
        return len(self.Y)

    @property
    def grid_shape(self):
        return self.Y.shape[1:]

    def feature(self, name):
        if name == self.schema.demand:
            return self.X3D
        for d in (self.maps2d, self.series, self.onehots, self.scalars):
            if name in d:
                return d[name]
        raise KeyError(name)

    def take(self, idx) -> "DemandDataset":
        idx = np.asarray(idx)
        sel = lambda d: {k: v[idx] for k, v in d.items()}
        return replace(self, X3D=self.X3D[idx], Y=self.Y[idx], maps2d=sel(self.maps2d), series=sel(self.series),
                       onehots=sel(self.onehots), scalars=sel(self.scalars), times=self.times[idx],
                       t_index=self.t_index[idx], split=None if self.split is None else self.split[idx])

    def part(self, label) -> "DemandDataset":
        if self.split is None:
            raise ValueError("dataset has no split labels")
        return self.take(np.nonzero(self.split == label)[0])

    def restrict(self, names) -> "DemandDataset":
        """Keep only the named optional features (the demand history always stays)."""
        keep = set(names)
        sel = lambda d: {k: v for k, v in d.items() if k in keep}
        return replace(self, maps2d=sel(self.maps2d), series=sel(self.series), onehots=sel(self.onehots),
                       scalars=sel(self.scalars), schema=self.schema.restrict(keep))

    def with_features(self, **groups) -> "DemandDataset":
        return replace(self, **groups)
