"""Model descriptions (ModelSpec) and training options."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

from ..errors import SpecError
from ..tensor import Activation

__all__ = ["ModelSpec", "TrainOptions", "OPTIMIZERS", "schema_hash"]

OPTIMIZERS = ("sgd", "momentum", "adam")


def _act(a):
    try:
        return Activation.parse(a).value
    except ValueError:
        raise SpecError(f"unknown activation {a!r}") from None


@dataclass
class ModelSpec:
    """Architecture and optimisation settings for the CNN or the subregion MLP.

    ``conv`` entries are ``{"filters", "kernel": (k1, k2, k3), "activation"}``
    (unit stride, same padding).  ``tconv`` entries are ``{"filters",
    "activation"}``; the first one spreads a 1 x 1 x L series over the grid
    with a (q, p, 1) kernel and later ones use 1 x 1 x 1 kernels.
    ``fusion`` and ``local`` configure the temporal fusion and the locally
    connected layer; ``dense`` lists hidden widths (the CNN appends the q*p
    output layer; the MLP appends a single output and skips zero widths).
    ``feature_mask`` maps optional feature names to on/off; features not
    listed are on.
    """

    kind: str = "cnn"
    grid: tuple = (11, 6)
    look_back: int = 6
    feature_mask: dict = field(default_factory=dict)
    conv: list = field(default_factory=lambda: [{"filters": 8, "kernel": (3, 3, 3), "activation": "relu"}])
    tconv: list = field(default_factory=lambda: [{"filters": 4, "activation": "relu"}])
    fusion: dict = field(default_factory=lambda: {"filters": 8, "activation": "relu"})
    local: dict = field(default_factory=lambda: {"filters": 4, "kernel": (3, 3), "activation": "relu"})
    dense: list = field(default_factory=lambda: [64])
    dense_activation: str = "relu"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    l2: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        self.conv = [dict(c, kernel=tuple(int(k) for k in c["kernel"]), activation=_act(c.get("activation", "relu")))
                     for c in self.conv]
        self.tconv = [dict(c, activation=_act(c.get("activation", "relu"))) for c in self.tconv]
        self.fusion = dict(self.fusion, activation=_act(self.fusion.get("activation", "relu")))
        self.local = dict(self.local, kernel=tuple(int(k) for k in self.local.get("kernel", (1, 1))),
                          activation=_act(self.local.get("activation", "relu")))
        self.dense = [int(w) for w in self.dense]
        self.dense_activation = _act(self.dense_activation)
        self.feature_mask = {str(k): bool(v) for k, v in self.feature_mask.items()}
        self.validate()

    def validate(self):
        if self.kind not in ("cnn", "mlp"):
            raise SpecError(f"unknown model kind {self.kind!r}")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise SpecError(f"bad grid {self.grid}")
        if self.look_back < 1:
            raise SpecError("look-back must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise SpecError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise SpecError("learning rate must be positive")
        if self.batch_size < 1:
            raise SpecError("batch size must be >= 1")
        if self.l2 < 0 or not 0 <= self.dropout < 1:
            raise SpecError("need l2 >= 0 and 0 <= dropout < 1")
        if any(w < 0 for w in self.dense):
            raise SpecError("dense widths must be >= 0")
        if self.kind == "cnn":
            if any(w < 1 for w in self.dense):
                raise SpecError("CNN hidden dense widths must be >= 1")
            for c in self.conv:
                if c["filters"] < 1 or len(c["kernel"]) != 3 or min(c["kernel"]) < 1:
                    raise SpecError(f"bad conv layer {c}")
            for c in self.tconv:
                if c["filters"] < 1:
                    raise SpecError(f"bad tconv layer {c}")
            if self.fusion["filters"] < 1 or self.local["filters"] < 1:
                raise SpecError("fusion and locally connected layers need >= 1 filter")

    def uses(self, name) -> bool:
        return self.feature_mask.get(name, True)

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["conv"] = [dict(c, kernel=list(c["kernel"])) for c in self.conv]
        d["local"] = dict(self.local, kernel=list(self.local["kernel"]))
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


@dataclass
class TrainOptions:
    max_epochs: int = 300
    patience: int = 20
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9):
            raise SpecError(f"split fractions must sum to 1, got {self.fractions}")
        if self.max_epochs < 1 or self.patience < 1:
            raise SpecError("max_epochs and patience must be >= 1")

    def to_dict(self):
        return {"max_epochs": self.max_epochs, "patience": self.patience, "fractions": list(self.fractions),
                "seed": self.seed}


def schema_hash(schema) -> str:
    return hashlib.sha256(json.dumps(schema.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
