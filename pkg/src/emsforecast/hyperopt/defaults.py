"""Default tuning spaces for the forecasters and their JSON config files.

The domains below are shipped defaults chosen for desk-scale data; they are
not taken from any published table.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..model.spec import ModelSpec
from .runners import Partition, validate_partition
from .space import BinaryFeature, Categorical, Integer, Real, SearchSpace

__all__ = [
    "FLAT_BUDGET",
    "HIER_BUDGET",
    "ACTIVATIONS",
    "flag_name",
    "default_space",
    "spec_from_theta",
    "save_space_config",
    "load_space_config",
]

FLAT_BUDGET = (500, 1000)   # random initialisation, BO iterations
HIER_BUDGET = (25, 250)     # per set
ACTIVATIONS = ("relu", "tanh", "elu", "sigmoid")


def flag_name(feature):
    return f"use_{feature}"


def _training_dims():
    return [
        Real("learning_rate", 1e-4, 3e-2, log=True),
        Categorical("batch_size", (16, 32, 64)),
        Categorical("optimizer", ("sgd", "momentum", "adam")),
        Real("l2", 1e-7, 1e-2, log=True),
        Real("dropout", 0.0, 0.5),
    ]


def _cnn_sets(small=False):
    c = 2 if small else 1     # small: halve widths and cap depth
    arch = [
        Integer("n_conv", 1, 3 - (c - 1)),
        Integer("conv_filters", 2, 16 // c),
        Integer("conv_kernel_space", 1, 3),
        Integer("conv_kernel_time", 1, 3),
        Integer("tconv_filters", 1, 8 // c),
        Integer("fusion_filters", 2, 16 // c),
        Integer("local_filters", 1, 8 // c),
        Integer("local_kernel", 1, 3),
        Integer("dense_width", 8, 128 // c),
    ]
    if not small:
        arch.insert(4, Integer("n_tconv", 1, 2))
    acts = [Categorical(f"{stage}_activation", ACTIVATIONS)
            for stage in ("conv", "tconv", "fusion", "local", "dense")]
    return [("architecture", arch), ("activations", acts), ("training", _training_dims())]


def _mlp_sets(small=False):
    arch = [Integer("n_hidden", 1, 2 if small else 3), Integer("hidden_width", 8, 64 if small else 128)]
    acts = [Categorical("dense_activation", ACTIVATIONS)]
    return [("architecture", arch), ("activations", acts), ("training", _training_dims())]


def default_space(schema, with_feature_selection=False, kind="cnn", budgets=HIER_BUDGET, init_random=2, small=False):
    """Search space and hierarchical partition for ``kind`` over ``schema``.

    Sets in order: feature flags (only with feature selection), architecture,
    activations, then regularisation / batch size / learning rate / optimizer.
    ``small`` narrows the architecture domains for quick desk-scale tuning.
    """
    if kind not in ("cnn", "mlp"):
        raise ValueError(f"unknown model kind {kind!r}")
    sets = _cnn_sets(small) if kind == "cnn" else _mlp_sets(small)
    if with_feature_selection:
        flags = [BinaryFeature(flag_name(f.name), f.name) for f in schema.optional()]
        if flags:
            sets = [("features", flags)] + sets
    dims = [d for _, group in sets for d in group]
    space = SearchSpace(dims)
    m, n = budgets
    part = Partition([[d.name for d in group] for _, group in sets], [m] * len(sets), [n] * len(sets),
                     ["gp"] * len(sets), init_random, [label for label, _ in sets])
    validate_partition(part, space)
    return space, part


def spec_from_theta(theta, schema, grid, look_back, kind="cnn") -> ModelSpec:
    """Turn a decoded assignment into a :class:`ModelSpec`."""
    mask = {f.name: bool(theta.get(flag_name(f.name), 1)) for f in schema.optional()}
    train = dict(optimizer=theta["optimizer"], learning_rate=float(theta["learning_rate"]),
                 batch_size=int(theta["batch_size"]), l2=float(theta["l2"]), dropout=float(theta["dropout"]))
    if kind == "mlp":
        return ModelSpec(kind="mlp", grid=tuple(grid), look_back=look_back, feature_mask=mask,
                         dense=[int(theta["hidden_width"])] * int(theta["n_hidden"]),
                         dense_activation=theta["dense_activation"], **train)
    ks, kt = int(theta["conv_kernel_space"]), int(theta["conv_kernel_time"])
    return ModelSpec(
        kind="cnn", grid=tuple(grid), look_back=look_back, feature_mask=mask,
        conv=[{"filters": int(theta["conv_filters"]), "kernel": (ks, ks, kt),
               "activation": theta["conv_activation"]}] * int(theta["n_conv"]),
        tconv=[{"filters": int(theta["tconv_filters"]), "activation": theta["tconv_activation"]}]
        * int(theta.get("n_tconv", 1)),
        fusion={"filters": int(theta["fusion_filters"]), "activation": theta["fusion_activation"]},
        local={"filters": int(theta["local_filters"]), "kernel": (int(theta["local_kernel"]),) * 2,
               "activation": theta["local_activation"]},
        dense=[int(theta["dense_width"])], dense_activation=theta["dense_activation"], **train)


def save_space_config(path, space, partition=None, extra=None):
    from ..datasets.io import atomic_write
    doc = {"space": space.to_dict(), "partition": None if partition is None else partition.to_dict()}
    if extra:
        doc.update(extra)
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=True))


def load_space_config(path):
    """Read ``{"space": ..., "partition": ...}``; the partition is validated against the space."""
    doc = json.loads(Path(path).read_text())
    if "space" not in doc:
        raise ValueError(f"{path}: missing 'space'")
    space = SearchSpace.from_dict(doc["space"])
    part = Partition.from_dict(doc["partition"]) if doc.get("partition") else None
    if part is not None:
        validate_partition(part, space)
    return space, part, doc
