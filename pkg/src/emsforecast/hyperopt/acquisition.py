"""Expected Improvement for minimisation and candidate-sampling proposals."""

from __future__ import annotations

import numpy as np
from scipy.special import erfcx, ndtr

__all__ = ["expected_improvement", "propose_next", "propose_encoded"]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(np.pi / 2.0)


def expected_improvement(mu, sigma, f_star):
    """EI(θ) = (f* − μ) Φ(z) + σ φ(z) with z = (f* − μ)/σ.

    At σ = 0 the value is max(f* − μ, 0).  For z < 0 the scaled
    complementary error function avoids the cancellation between the two
    terms, so the result stays non-negative and monotone in μ.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = f_star - mu
    mu, sigma, imp = np.broadcast_arrays(mu, sigma, imp)
    out = np.array(np.maximum(imp, 0.0), dtype=float)
    pos = sigma > 0
    if np.any(pos):
        s = sigma[pos]
        i = imp[pos]
        with np.errstate(over="ignore", divide="ignore"):
            z = i / s
        val = np.zeros_like(z)
        # beyond |z| = 40 the Gaussian tail is below double precision
        big = z > 40.0
        val[big] = i[big]
        up = (z >= 0) & ~big
        zu = z[up]
        val[up] = i[up] * ndtr(zu) + s[up] * _INV_SQRT_2PI * np.exp(-0.5 * zu * zu)
        lo = (z < 0) & (z >= -40.0)
        zl = z[lo]
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * zl * zl)
        val[lo] = s[lo] * pdf * (1.0 + zl * _SQRT_HALF_PI * erfcx(-zl / np.sqrt(2.0)))
        out[pos] = np.maximum(val, 0.0)
    return out if out.ndim else float(out)


def propose_encoded(predict, space, f_star, rng, n_candidates=1000):
    """Score ``n_candidates`` random encoded points; return (row, ei) of the best.

    ``predict`` maps an encoded matrix to ``(mu, sigma)``.  Ties go to the
    earliest candidate in draw order.
    """
    cand = space.sample_encoded(rng, n_candidates)
    mu, sigma = predict(cand)
    ei = expected_improvement(mu, sigma, f_star)
    i = int(np.argmax(ei))
    return cand[i], float(ei[i])


def propose_next(surrogate, space, f_star, rng, n_candidates=1000):
    """Argmax of EI among ``n_candidates`` draws from ``space``; returns theta."""
    predict = surrogate.predict if hasattr(surrogate, "predict") else surrogate
    row, _ = propose_encoded(predict, space, f_star, rng, n_candidates)
    return space.decode(row)
