"""Optimisation loops: random search, basic BO, dimension-dropout BO and
hierarchical BO over a partition of the search dimensions.

All loops minimise ``objective(theta) -> float`` and draw every random
number from the single generator passed in, in a fixed order, so a seed
determines the whole trial sequence.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import PartitionError
from .acquisition import propose_encoded
from .space import SearchSpace, Trial
from .surrogates import SURROGATE_KINDS, SurrogateConfig, _State, fit_surrogate

__all__ = [
    "OptimizationResult",
    "Partition",
    "validate_partition",
    "random_search",
    "bo_run",
    "bo_dropout_run",
    "hierarchical_bo_run",
    "dropout_dims",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("iteration", "provenance", "value", "best_so_far", "theta_json")


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


@dataclass
class OptimizationResult:
    incumbent: dict
    best_value: float
    trials: list

    @property
    def values(self) -> np.ndarray:
        return np.array([t.value for t in self.trials])

    @property
    def best_so_far(self) -> np.ndarray:
        out, best = [], math.inf
        for t in self.trials:
            if not t.failed:
                best = min(best, t.value)
            out.append(best if best < math.inf else t.value)
        return np.array(out)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, b in zip(self.trials, self.best_so_far):
            theta = {k: _json_value(v) for k, v in t.theta.items()}
            w.writerow([t.iteration, t.provenance, repr(float(t.value)), repr(float(b)),
                        json.dumps(theta, sort_keys=False)])
        return buf.getvalue()


class _Recorder:
    """Evaluates the objective and keeps the trial list and incumbent."""

    def __init__(self, objective, callback=None):
        self.objective = objective
        self.trials: list[Trial] = []
        self.callback = callback
        self.best: Trial | None = None
        self.encoded: dict = {}

    def evaluate(self, theta, provenance, level=None) -> Trial:
        failed, err = False, None
        try:
            value = float(self.objective(dict(theta)))
            if not math.isfinite(value):
                raise FloatingPointError(f"objective returned {value}")
        except Exception as exc:  # objective failures are recorded, not raised
            failed, err = True, f"{type(exc).__name__}: {exc}"
            value = self._penalty()
        t = Trial(dict(theta), value, len(self.trials), provenance, failed, level, err)
        self.trials.append(t)
        if not failed and (self.best is None or value < self.best.value):
            self.best = t
        if self.callback is not None:
            self.callback(t)
        return t

    def _penalty(self) -> float:
        ok = [t.value for t in self.trials if not t.failed]
        if not ok:
            return 1e10
        worst = max(ok)
        return 10.0 * worst if worst > 0 else worst + 10.0 * max(abs(worst), 1.0)

    def incumbent(self) -> Trial:
        if self.best is not None:
            return self.best
        return min(self.trials, key=lambda t: t.value)

    def result(self) -> OptimizationResult:
        inc = self.incumbent()
        return OptimizationResult(dict(inc.theta), inc.value, self.trials)


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _check_kind(kind):
    if kind not in SURROGATE_KINDS:
        raise ValueError(f"unknown surrogate kind {kind!r}; expected one of {SURROGATE_KINDS}")


def _training_data(trials, space: SearchSpace, fixed=None, cache=None):
    """Encoded successful trials, optionally only those matching ``fixed``."""
    rows, ys = [], []
    names = tuple(space.names)
    for t in trials:
        if t.failed:
            continue
        if fixed and any(t.theta[k] != v for k, v in fixed.items()):
            continue
        key = (names, t.iteration)
        row = None if cache is None else cache.get(key)
        if row is None:
            row = space.encode({k: t.theta[k] for k in names})
            if cache is not None:
                cache[key] = row
        rows.append(row)
        ys.append(t.value)
    return np.array(rows).reshape(len(rows), space.width), np.array(ys)


def _bo_proposal(kind, sub, rec, rng, n_candidates, config, state, fixed=None):
    """Fit a surrogate on ``sub``'s coordinates and return the EI argmax as theta.

    Falls back to a random draw when no trial is usable yet.
    """
    X, y = _training_data(rec.trials, sub, fixed, rec.encoded)
    if len(y) == 0:
        return sub.decode(sub.sample_encoded(rng, 1)[0])
    model = fit_surrogate(kind, X, y, rng, config, state)
    row, _ = propose_encoded(model.predict, sub, float(y.min()), rng, n_candidates)
    return sub.decode(row)


def random_search(objective, space: SearchSpace, n, rng=None, callback=None) -> OptimizationResult:
    if n < 1:
        raise ValueError("random search needs at least one evaluation")
    rng = _as_rng(rng)
    rec = _Recorder(objective, callback)
    for _ in range(n):
        rec.evaluate(space.decode(space.sample_encoded(rng, 1)[0]), "random")
    return rec.result()


def bo_run(objective, space: SearchSpace, m, n, surrogate="gp", rng=None, n_candidates=1000,
           config: SurrogateConfig | None = None, callback=None) -> OptimizationResult:
    """``m`` random trials, then ``n`` fit/propose/evaluate iterations."""
    if m < 2 or n < 0:
        raise ValueError("need m >= 2 and n >= 0")
    _check_kind(surrogate)
    rng = _as_rng(rng)
    rec = _Recorder(objective, callback)
    for _ in range(m):
        rec.evaluate(space.decode(space.sample_encoded(rng, 1)[0]), "random")
    state = _State()
    for _ in range(n):
        theta = _bo_proposal(surrogate, space, rec, rng, n_candidates, config, state)
        rec.evaluate(theta, "bo")
    return rec.result()


def dropout_dims(d_tilde, n_dims) -> int:
    """Subspace size d = floor(d_tilde * |D|); must satisfy 1 <= d < |D|."""
    if not 0.0 < d_tilde < 1.0:
        raise ValueError(f"d_tilde must lie in (0, 1), got {d_tilde}")
    d = int(math.floor(d_tilde * n_dims))
    if not 1 <= d < n_dims:
        raise ValueError(f"d_tilde={d_tilde} gives d={d} for {n_dims} dimensions; need 1 <= d < {n_dims}")
    return d


def bo_dropout_run(objective, space: SearchSpace, m, n, d_tilde, p, rng=None, n_candidates=1000,
                   config: SurrogateConfig | None = None, callback=None) -> OptimizationResult:
    """BO that optimises EI over ``d`` random dimensions per iteration.

    A GP is fitted on the projections of all successful trials onto the drawn
    dimensions.  The left-out coordinates are filled by one coin per
    iteration: with probability ``p`` they are drawn at random, otherwise
    they are copied from the incumbent.
    """
    if m < 2 or n < 0:
        raise ValueError("need m >= 2 and n >= 0")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    d = dropout_dims(d_tilde, len(space))
    rng = _as_rng(rng)
    rec = _Recorder(objective, callback)
    for _ in range(m):
        rec.evaluate(space.decode(space.sample_encoded(rng, 1)[0]), "random")
    names = space.names
    # hyperparameters remembered per encoded column warm-start each subspace fit
    memory: dict = {}
    for _ in range(n):
        picked = np.sort(rng.choice(len(names), size=d, replace=False))
        sub = space.subspace([names[i] for i in picked])
        cols = [(dim.name, j) for dim in sub.dims for j in range(dim.width)]
        state = _State()
        if memory:
            state.log_params = np.array([memory.get(c, np.log(0.5)) for c in cols]
                                        + [memory["signal"], memory["noise"]])
        partial = _bo_proposal("gp", sub, rec, rng, n_candidates, config, state)
        if state.log_params is not None and len(state.log_params) == len(cols) + 2:
            memory.update(zip(cols, state.log_params[:-2]))
            memory["signal"], memory["noise"] = state.log_params[-2:]
        rest = space.subspace([k for k in names if k not in partial])
        if rng.random() < p:
            fill = rest.decode(rest.sample_encoded(rng, 1)[0])
        else:
            inc = rec.incumbent().theta
            fill = {k: inc[k] for k in rest.names}
        merged = {**partial, **fill}
        rec.evaluate({k: merged[k] for k in names}, "dropout")
    return rec.result()


@dataclass
class Partition:
    """Disjoint sets of dimension names, optimised in list order.

    ``init_random`` trials of global random search seed the incumbent; set k
    then gets ``random_init[k]`` random and ``bo_iters[k]`` BO trials with
    surrogate ``surrogates[k]``.
    """

    sets: list
    random_init: list = None
    bo_iters: list = None
    surrogates: list = None
    init_random: int = 2
    labels: list = None

    def __post_init__(self):
        self.sets = [list(s) for s in self.sets]
        k = len(self.sets)
        self.random_init = list(self.random_init) if self.random_init is not None else [25] * k
        self.bo_iters = list(self.bo_iters) if self.bo_iters is not None else [250] * k
        self.surrogates = list(self.surrogates) if self.surrogates is not None else ["gp"] * k
        self.labels = list(self.labels) if self.labels is not None else [f"set{i}" for i in range(k)]
        for name, v in (("random_init", self.random_init), ("bo_iters", self.bo_iters),
                        ("surrogates", self.surrogates), ("labels", self.labels)):
            if len(v) != k:
                raise ValueError(f"{name} has {len(v)} entries for {k} sets")
        if any(b < 0 for b in self.random_init + self.bo_iters) or self.init_random < 1:
            raise ValueError("budgets must be non-negative and init_random >= 1")
        for s in self.surrogates:
            _check_kind(s)

    @property
    def total_budget(self) -> int:
        return self.init_random + sum(self.random_init) + sum(self.bo_iters)

    def to_dict(self):
        return {"sets": self.sets, "random_init": self.random_init, "bo_iters": self.bo_iters,
                "surrogates": self.surrogates, "init_random": self.init_random, "labels": self.labels}

    @classmethod
    def from_dict(cls, d):
        return cls(d["sets"], d.get("random_init"), d.get("bo_iters"), d.get("surrogates"),
                   d.get("init_random", 2), d.get("labels"))


def validate_partition(partition, space: SearchSpace) -> bool:
    """Every dimension must sit in exactly one set; raises PartitionError otherwise."""
    sets = partition.sets if isinstance(partition, Partition) else [list(s) for s in partition]
    seen: dict = {}
    for s in sets:
        for name in s:
            seen[name] = seen.get(name, 0) + 1
    names = space.names
    missing = [n for n in names if n not in seen]
    duplicated = [n for n in names if seen.get(n, 0) > 1]
    unknown = sorted(n for n in seen if n not in set(names))
    if missing or duplicated or unknown:
        parts = []
        if duplicated:
            parts.append("duplicated " + ", ".join(repr(n) for n in duplicated))
        if missing:
            parts.append("missing " + ", ".join(repr(n) for n in missing))
        if unknown:
            parts.append("unknown " + ", ".join(repr(n) for n in unknown))
        raise PartitionError("invalid partition: " + "; ".join(parts), missing, duplicated, unknown)
    return True


def hierarchical_bo_run(objective, space: SearchSpace, partition: Partition, rng=None, n_candidates=1000,
                        config: SurrogateConfig | None = None, callback=None) -> OptimizationResult:
    """Optimise the sets of ``partition`` one after another.

    While set k is active, all other coordinates stay at the incumbent held
    when the level started.  The level's surrogate sees every successful trial
    that agrees with those fixed values, which includes the incumbent itself.
    """
    validate_partition(partition, space)
    rng = _as_rng(rng)
    rec = _Recorder(objective, callback)
    for _ in range(partition.init_random):
        rec.evaluate(space.decode(space.sample_encoded(rng, 1)[0]), "random")
    for k, names in enumerate(partition.sets):
        tag = f"hier{k}"
        sub = space.subspace(names)
        inc = rec.incumbent().theta
        fixed = {n: inc[n] for n in space.names if n not in sub.names}

        def full(part):
            merged = {**fixed, **part}
            return {n: merged[n] for n in space.names}

        for _ in range(partition.random_init[k]):
            rec.evaluate(full(sub.decode(sub.sample_encoded(rng, 1)[0])), tag, k)
        state = _State()
        for _ in range(partition.bo_iters[k]):
            part = _bo_proposal(partition.surrogates[k], sub, rec, rng, n_candidates, config, state, fixed)
            rec.evaluate(full(part), tag, k)
    return rec.result()
