"""Mixed-space Bayesian optimisation."""

from .acquisition import expected_improvement, propose_encoded, propose_next
from .defaults import (
    ACTIVATIONS,
    FLAT_BUDGET,
    HIER_BUDGET,
    default_space,
    flag_name,
    load_space_config,
    save_space_config,
    spec_from_theta,
)
from .gp import GaussianProcess, fit_gp, gp_from_params, log_marginal_likelihood
from .runners import (
    TRACE_COLUMNS,
    OptimizationResult,
    Partition,
    bo_dropout_run,
    bo_run,
    dropout_dims,
    hierarchical_bo_run,
    random_search,
    validate_partition,
)
from .space import BinaryFeature, Categorical, Integer, Real, SearchSpace, Trial, decode, encode, sample_random
from .surrogates import ForestSurrogate, SurrogateConfig, fit_surrogate


def gp_fit(trials, space, rng=None, **kwargs):
    """Fit a GP on the successful ``trials`` encoded in ``space``."""
    ok = [t for t in trials if not t.failed]
    if len(ok) < 2:
        raise ValueError("need at least two successful trials")
    X = [space.encode(t.theta) for t in ok]
    return fit_gp(X, [t.value for t in ok], rng=rng, **kwargs)


def gp_predict(gp, theta, space):
    mu, sigma = gp.predict(space.encode(theta)[None, :])
    return float(mu[0]), float(sigma[0])
