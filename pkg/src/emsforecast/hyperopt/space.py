"""Mixed search spaces: real, integer, categorical and binary feature-flag dimensions.

A hyperparameter assignment ``theta`` is a plain ``dict`` mapping dimension
names to values, ordered like the space.  Surrogates see the numeric
encoding produced by :func:`encode`: reals and integers are min-max scaled to
``[0, 1]`` (reals in log space when flagged), categoricals are one-hot, and
binary flags stay 0/1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Real",
    "Integer",
    "Categorical",
    "BinaryFeature",
    "SearchSpace",
    "Trial",
    "sample_random",
    "encode",
    "decode",
    "dimension_from_dict",
]


@dataclass(frozen=True)
class Real:
    name: str
    lo: float
    hi: float
    log: bool = False
    kind = "real"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log-scaled dimension needs lo > 0")

    width = 1

    def _bounds(self):
        return (math.log(self.lo), math.log(self.hi)) if self.log else (self.lo, self.hi)

    def contains(self, v) -> bool:
        return isinstance(v, (int, float, np.floating, np.integer)) and self.lo <= float(v) <= self.hi

    def sample_encoded(self, rng, n):
        return rng.random(n)[:, None]

    def encode_value(self, v):
        a, b = self._bounds()
        x = math.log(v) if self.log else float(v)
        return [min(max((x - a) / (b - a), 0.0), 1.0)]

    def decode_block(self, e):
        a, b = self._bounds()
        x = a + float(np.clip(e[0], 0.0, 1.0)) * (b - a)
        v = math.exp(x) if self.log else x
        return min(max(v, self.lo), self.hi)

    def to_dict(self):
        return {"name": self.name, "kind": "real", "lo": self.lo, "hi": self.hi, "log": self.log}


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int
    kind = "integer"
    width = 1

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and self.lo <= v <= self.hi

    def sample_encoded(self, rng, n):
        return ((rng.integers(self.lo, self.hi + 1, size=n) - self.lo) / (self.hi - self.lo))[:, None]

    def encode_value(self, v):
        return [(int(v) - self.lo) / (self.hi - self.lo)]

    def decode_block(self, e):
        return int(min(max(round(self.lo + float(e[0]) * (self.hi - self.lo)), self.lo), self.hi))

    def to_dict(self):
        return {"name": self.name, "kind": "integer", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple
    kind = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) < 2:
            raise ValueError(f"{self.name}: categorical dimension needs at least 2 choices")
        if len(set(self.choices)) != len(self.choices):
            raise ValueError(f"{self.name}: duplicate choices")

    @property
    def width(self):
        return len(self.choices)

    def contains(self, v) -> bool:
        return v in self.choices

    def sample_encoded(self, rng, n):
        out = np.zeros((n, self.width))
        out[np.arange(n), rng.integers(0, self.width, size=n)] = 1.0
        return out

    def encode_value(self, v):
        out = [0.0] * self.width
        out[self.choices.index(v)] = 1.0
        return out

    def decode_block(self, e):
        return self.choices[int(np.argmax(e))]

    def to_dict(self):
        return {"name": self.name, "kind": "categorical", "choices": list(self.choices)}


@dataclass(frozen=True)
class BinaryFeature:
    """Include (1) or drop (0) the input feature ``feature``."""

    name: str
    feature: str = ""
    kind = "binary_feature"
    width = 1

    def __post_init__(self):
        if not self.feature:
            object.__setattr__(self, "feature", self.name)

    def contains(self, v) -> bool:
        return v in (0, 1) and not isinstance(v, float)

    def sample_encoded(self, rng, n):
        return rng.integers(0, 2, size=n).astype(float)[:, None]

    def encode_value(self, v):
        return [float(int(v))]

    def decode_block(self, e):
        return int(float(e[0]) >= 0.5)

    def to_dict(self):
        return {"name": self.name, "kind": "binary_feature", "feature": self.feature}


def dimension_from_dict(d):
    kind = d["kind"]
    if kind == "real":
        return Real(d["name"], float(d["lo"]), float(d["hi"]), bool(d.get("log", False)))
    if kind == "integer":
        return Integer(d["name"], int(d["lo"]), int(d["hi"]))
    if kind == "categorical":
        return Categorical(d["name"], tuple(d["choices"]))
    if kind == "binary_feature":
        return BinaryFeature(d["name"], d.get("feature", d["name"]))
    raise ValueError(f"unknown dimension kind {kind!r}")


@dataclass(frozen=True)
class SearchSpace:
    """Ordered collection of uniquely named dimensions."""

    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ValueError(f"duplicate dimension names: {dup}")

    @property
    def names(self) -> list:
        return [d.name for d in self.dims]

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, name):
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def width(self) -> int:
        return sum(d.width for d in self.dims)

    def slices(self) -> dict:
        """Column slice of each dimension inside the encoded vector."""
        out, start = {}, 0
        for d in self.dims:
            out[d.name] = slice(start, start + d.width)
            start += d.width
        return out

    def subspace(self, names) -> "SearchSpace":
        wanted = set(names)
        return SearchSpace(tuple(d for d in self.dims if d.name in wanted))

    def sample_encoded(self, rng, n) -> np.ndarray:
        """``n`` independent uniform draws, directly in encoded form.

        Dimensions are drawn one after another in space order, each as a
        vector of ``n`` values, so the result depends only on the seed.
        """
        if not self.dims:
            return np.zeros((n, 0))
        return np.hstack([d.sample_encoded(rng, n) for d in self.dims])

    def decode(self, row) -> dict:
        row = np.asarray(row, dtype=float)
        return {d.name: d.decode_block(row[s]) for d, s in zip(self.dims, self.slices().values())}

    def encode(self, theta) -> np.ndarray:
        vec = []
        for d in self.dims:
            if d.name not in theta:
                raise ValueError(f"theta lacks dimension {d.name!r}")
            v = theta[d.name]
            if not d.contains(v):
                raise ValueError(f"value {v!r} outside the domain of {d.name!r}")
            vec.extend(d.encode_value(v))
        return np.asarray(vec, dtype=float)

    def contains(self, theta) -> bool:
        return all(d.name in theta and d.contains(theta[d.name]) for d in self.dims)

    def to_dict(self):
        return {"dims": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(dimension_from_dict(x) for x in d["dims"]))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def sample_random(space: SearchSpace, rng) -> dict:
    """One uniform draw from ``space`` (log-uniform for log-scaled reals)."""
    return space.decode(space.sample_encoded(np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng, 1)[0])


def encode(theta, space: SearchSpace) -> np.ndarray:
    return space.encode(theta)


def decode(vec, space: SearchSpace) -> dict:
    return space.decode(vec)


@dataclass
class Trial:
    """One objective evaluation.

    ``provenance`` is ``"random"``, ``"bo"``, ``"dropout"`` or ``"hier<k>"``
    for the k-th level of a hierarchical run (``level`` holds ``k``).  Failed
    evaluations carry a penalty value and are excluded from surrogate fits.
    """

    theta: dict
    value: float
    iteration: int
    provenance: str
    failed: bool = False
    level: int | None = None
    error: str | None = field(default=None, repr=False)
