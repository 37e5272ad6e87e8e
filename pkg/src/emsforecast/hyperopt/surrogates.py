"""Surrogate factories used by the optimisation loops.

Every surrogate exposes ``predict(X) -> (mu, sigma)`` on encoded inputs.
Tree-ensemble uncertainty is the spread of the member predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..trees import fit_forest, forest_mean_var
from .gp import fit_gp, gp_from_params

__all__ = ["SurrogateConfig", "ForestSurrogate", "fit_surrogate", "SURROGATE_KINDS"]

SURROGATE_KINDS = ("gp", "rf", "et")


@dataclass
class SurrogateConfig:
    """Knobs shared by all loops.

    ``gp_refit_every`` re-optimises GP hyperparameters only every k-th fit
    and otherwise reuses the previous ones (the posterior is always updated).
    """

    gp_starts: int = 3
    gp_maxiter: int = 60
    gp_refit_every: int = 1
    gp_fix_noise: float | None = None
    n_trees: int = 20
    min_samples_leaf: int = 2
    extra: dict = field(default_factory=dict)


@dataclass
class ForestSurrogate:
    forest: object

    def predict(self, X):
        mu, var = forest_mean_var(self.forest, np.atleast_2d(X))
        return np.asarray(mu), np.sqrt(np.asarray(var))


class _State:
    """Carries warm-start hyperparameters between successive GP fits."""

    def __init__(self):
        self.log_params = None
        self.fits = 0


def fit_surrogate(kind, X, y, rng, config=None, state=None):
    config = config or SurrogateConfig()
    if kind == "gp":
        optimize = True
        warm = None
        if state is not None:
            warm = state.log_params
            if warm is not None and len(warm) != X.shape[1] + 2:
                warm = None
            optimize = warm is None or state.fits % max(config.gp_refit_every, 1) == 0
        if optimize:
            gp = fit_gp(X, y, rng=rng, n_starts=config.gp_starts, warm_start=warm,
                        fix_noise=config.gp_fix_noise, maxiter=config.gp_maxiter)
        else:
            gp = gp_from_params(X, y, warm)
        if state is not None:
            state.log_params = gp.log_params
            state.fits += 1
        return gp
    if kind in ("rf", "et"):
        mode = "bagging" if kind == "rf" else "extra"
        f = fit_forest(X, y, n_trees=config.n_trees, mode=mode, rng=rng,
                       min_samples_leaf=config.min_samples_leaf, feature_subsample=1.0)
        return ForestSurrogate(f)
    raise ValueError(f"unknown surrogate kind {kind!r}; expected one of {SURROGATE_KINDS}")
