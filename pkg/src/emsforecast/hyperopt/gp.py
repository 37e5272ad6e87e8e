"""Gaussian-process regression with a Matérn-5/2 ARD kernel.

Targets are standardised before fitting so one set of hyperparameter bounds
works for any objective scale.  Hyperparameters live in log space:
``[log l_1, ..., log l_d, log signal_var, log noise_var]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.optimize import minimize

from ..errors import NumericError

__all__ = ["GaussianProcess", "fit_gp", "gp_from_params", "log_marginal_likelihood"]

SQRT5 = np.sqrt(5.0)
NOISE_FLOOR = 1e-8
MAX_JITTER = 1e-4
FTOL = 1e-6

LENGTH_BOUNDS = (1e-2, 1e1)
SIGNAL_BOUNDS = (1e-2, 1e2)
NOISE_BOUNDS = (NOISE_FLOOR, 1.0)


def _sq_dists(X):
    """Per-dimension squared differences, shape (d, n, n)."""
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


def matern52(r):
    a = SQRT5 * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _cholesky(K, start=0.0):
    """Cholesky factor with jitter escalated x10 from 1e-10 up to MAX_JITTER."""
    jitter = start
    n = K.shape[0]
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER * (1 + 1e-9):
                raise NumericError("kernel matrix not positive definite after maximum jitter") from None


def log_marginal_likelihood(log_params, D, y, grad=True):
    """Log evidence of standardised ``y`` and its gradient in log-parameters.

    Returns ``-inf`` (and zero gradient) where the kernel matrix cannot be
    factorised without jitter.
    """
    d = D.shape[0]
    inv_ell2 = np.exp(-2.0 * log_params[:d])
    s2 = np.exp(log_params[d])
    noise = np.exp(log_params[d + 1])
    n = y.shape[0]

    r = np.sqrt(np.maximum(np.tensordot(inv_ell2, D, axes=1), 0.0))
    a = SQRT5 * r
    e = np.exp(-a)
    Kf = s2 * (1.0 + a + a * a / 3.0) * e
    K = Kf + noise * np.eye(n)
    L, info = dpotrf(K, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        return (-np.inf, np.zeros_like(log_params)) if grad else -np.inf
    alpha, _ = dpotrs(L, y, lower=1)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return lml
    Kinv, _ = dpotri(L, lower=1)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    # dK/dlog l_d = s2 * (5/3) (1 + a) e^{-a} * D_d / l_d^2
    common = s2 * (5.0 / 3.0) * (1.0 + a) * e
    g = np.empty_like(log_params)
    g[:d] = 0.5 * inv_ell2 * np.tensordot(D, W * common, axes=([1, 2], [0, 1]))
    g[d] = 0.5 * np.sum(W * Kf)
    g[d + 1] = 0.5 * noise * np.trace(W)
    return lml, g


@dataclass
class GaussianProcess:
    """Fitted GP; ``predict`` returns mean and standard deviation in original units."""

    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray
    lml: float

    @property
    def log_params(self):
        return np.concatenate([np.log(self.lengthscales), [np.log(self.signal_var), np.log(self.noise_var)]])

    def _cross(self, Xs):
        a = Xs / self.lengthscales
        b = self.X / self.lengthscales
        r2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
        return self.signal_var * matern52(np.sqrt(np.maximum(r2, 0.0)))

    def predict(self, Xs, return_std=True):
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.X.shape[1]:
            raise ValueError(f"expected {self.X.shape[1]} encoded columns, got {Xs.shape[1]}")
        Ks = self._cross(Xs)
        mu = self.y_mean + self.y_std * (Ks @ self.alpha)
        if not return_std:
            return mu
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = np.maximum(self.signal_var - np.einsum("ij,ij->j", v, v), 0.0)
        return mu, self.y_std * np.sqrt(var)


def _standardise(y):
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not np.isfinite(y_std) or y_std <= 0.0:
        y_std = 1.0
    return y_mean, y_std, (y - y_mean) / y_std


def gp_from_params(X, y, log_params, lml=None):
    """Condition a GP with fixed log-hyperparameters on ``(X, y)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    log_params = np.asarray(log_params, dtype=float)
    n, d = X.shape
    y_mean, y_std, ys = _standardise(y)
    D = _sq_dists(X)
    if lml is None:
        lml = float(log_marginal_likelihood(log_params, D, ys, grad=False))
    ell = np.exp(log_params[:d])
    s2 = float(np.exp(log_params[d]))
    noise = float(np.exp(log_params[d + 1]))
    r = np.sqrt(np.maximum(np.tensordot(1.0 / ell**2, D, axes=1), 0.0))
    L, jitter = _cholesky(s2 * matern52(r) + noise * np.eye(n))
    alpha = cho_solve((L, True), ys)
    return GaussianProcess(X, y, y_mean, y_std, ell, s2, noise, jitter, L, alpha, lml)


def _bounds(d, fix_noise):
    lo = [np.log(LENGTH_BOUNDS[0])] * d + [np.log(SIGNAL_BOUNDS[0])]
    hi = [np.log(LENGTH_BOUNDS[1])] * d + [np.log(SIGNAL_BOUNDS[1])]
    if fix_noise is None:
        lo.append(np.log(NOISE_BOUNDS[0]))
        hi.append(np.log(NOISE_BOUNDS[1]))
    else:
        v = np.log(max(fix_noise, NOISE_FLOOR))
        lo.append(v)
        hi.append(v)
    return np.array(lo), np.array(hi)


def fit_gp(X, y, rng=None, n_starts=3, warm_start=None, fix_noise=None, maxiter=60, optimize=True):
    """Fit by marginal-likelihood maximisation from several starting points.

    Candidates are a default guess, an optional warm start and ``n_starts - 1``
    uniform draws inside the bounds.  L-BFGS-B runs from the best candidate;
    the returned state never has a lower likelihood than any candidate.
    ``fix_noise`` pins the noise variance (in standardised units).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 1 or y.shape[0] != n:
        raise ValueError("need at least one observation with matching targets")
    rng = np.random.default_rng(rng)
    _, _, ys = _standardise(y)
    D = _sq_dists(X)
    lo, hi = _bounds(d, fix_noise)

    default = np.concatenate([np.full(d, np.log(0.5)), [0.0], [np.log(1e-4)]])
    cands = [np.clip(default, lo, hi)]
    if warm_start is not None and len(warm_start) == d + 2:
        cands.append(np.clip(np.asarray(warm_start, dtype=float), lo, hi))
    for _ in range(max(n_starts - 1, 0)):
        cands.append(lo + rng.random(d + 2) * (hi - lo))
    scores = [log_marginal_likelihood(c, D, ys, grad=False) for c in cands]
    best = int(np.argmax(scores))
    theta, best_lml = cands[best], scores[best]

    if optimize and n >= 2:
        def nll(p):
            v, g = log_marginal_likelihood(p, D, ys)
            if not np.isfinite(v):
                return 1e25, np.zeros_like(p)
            return -v, -g

        res = minimize(nll, theta, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": maxiter, "ftol": FTOL})
        cand_lml = log_marginal_likelihood(res.x, D, ys, grad=False)
        if np.isfinite(cand_lml) and cand_lml >= best_lml:
            theta, best_lml = res.x, cand_lml

    return gp_from_params(X, y, theta, lml=float(best_lml))
