"""Cheap synthetic objectives for exercising the optimisers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .space import BinaryFeature, Real, SearchSpace

__all__ = ["Objective", "objective_suite", "quadratic", "branin"]


@dataclass
class Objective:
    name: str
    space: SearchSpace
    fn: object
    optimum: float

    def __call__(self, theta):
        return self.fn(theta)


def quadratic(center, lo=-5.0, hi=5.0, name="quadratic_bowl", weights=None):
    center = [float(c) for c in center]
    w = [1.0] * len(center) if weights is None else [float(v) for v in weights]
    names = [f"x{i}" for i in range(len(center))]
    space = SearchSpace([Real(n, lo, hi) for n in names])

    def fn(theta):
        return sum(wi * (theta[n] - c) ** 2 for wi, n, c in zip(w, names, center))

    return Objective(name, space, fn, 0.0)


def branin():
    space = SearchSpace([Real("x1", -5.0, 10.0), Real("x2", 0.0, 15.0)])
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)

    def fn(theta):
        x1, x2 = theta["x1"], theta["x2"]
        return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10

    return Objective("branin", space, fn, 0.397887357729738)


def shifted_sphere_with_decoys(shift=1.5, n_real=3, n_decoys=3):
    names = [f"x{i}" for i in range(n_real)]
    dims = [Real(n, -5.0, 5.0) for n in names] + [BinaryFeature(f"decoy{i}") for i in range(n_decoys)]

    def fn(theta):
        return sum((theta[n] - shift) ** 2 for n in names)

    return Objective("shifted_sphere_decoys", SearchSpace(dims), fn, 0.0)


def noisy_quadratic(sigma=0.05, seed=0):
    base = quadratic([0.2, -0.4], -2.0, 2.0, "noisy_quadratic")
    rng = np.random.default_rng(seed)

    def fn(theta):
        return base.fn(theta) + sigma * float(rng.standard_normal())

    return Objective("noisy_quadratic", base.space, fn, 0.0)


def objective_suite(seed=0):
    """The five-objective comparison suite; ``seed`` drives the observation noise."""
    return [
        quadratic([1.0, -2.0, 0.5]),
        shifted_sphere_with_decoys(),
        branin(),
        quadratic([0.3] * 10, 0.0, 1.0, "separable_10d", weights=[1.0 + 0.2 * i for i in range(10)]),
        noisy_quadratic(0.05, seed),
    ]
