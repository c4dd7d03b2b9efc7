"""Gaussian-process Bayesian optimization with expected improvement (minimization).

The surrogate is a noiseless GP with a squared-exponential kernel on inputs
rescaled to the unit box and standardized outputs.  The length-scale is picked
by maximizing the profile marginal likelihood over a small grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.stats import norm, qmc

LENGTH_SCALES = (0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0)
JITTER = 1e-8


def se_kernel(X, Y, length):
    d2 = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * d2 / length**2)


@dataclass
class GaussianProcess:
    """Noiseless GP posterior fitted on ``(X, y)`` in unit-box coordinates."""

    X: np.ndarray
    y: np.ndarray
    length: float = 0.2
    jitter: float = 0.0
    _mean: float = field(init=False, default=0.0)
    _scale: float = field(init=False, default=1.0)

    def __post_init__(self):
        self._mean = float(np.mean(self.y))
        spread = float(np.std(self.y))
        self._scale = spread if spread > 0 else 1.0
        self._z = (self.y - self._mean) / self._scale
        self._factor()

    def _factor(self):
        K = se_kernel(self.X, self.X, self.length)
        n = len(self.X)
        try:
            self._chol = sla.cho_factor(K + self.jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            self.jitter = max(self.jitter, JITTER)
            self._chol = sla.cho_factor(K + self.jitter * np.eye(n), lower=True)
        self._alpha = sla.cho_solve(self._chol, self._z)

    @property
    def constant(self) -> bool:
        return bool(np.all(self.y == self.y[0]))

    def log_marginal_likelihood(self) -> float:
        # profile likelihood: the signal variance is set to its ML value
        n = len(self.X)
        quad = float(self._z @ self._alpha)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol[0])))
        sig2 = max(quad / n, 1e-300)
        return -0.5 * n * np.log(sig2) - 0.5 * logdet - 0.5 * n

    def predict(self, Xs):
        """Posterior mean and standard deviation in original output units."""
        Xs = np.atleast_2d(Xs)
        k = se_kernel(Xs, self.X, self.length)
        mu = k @ self._alpha
        v = sla.cho_solve(self._chol, k.T)
        var = np.maximum(1.0 - np.sum(k * v.T, axis=1), 0.0)
        dist = np.min(np.sum((Xs[:, None, :] - self.X[None]) ** 2, axis=-1), axis=1)
        var[dist < 1e-24] = 0.0
        sig2 = max(float(self._z @ self._alpha) / len(self.X), 1e-300)
        return self._mean + self._scale * mu, self._scale * np.sqrt(var * sig2)


def fit_gp(X, y) -> GaussianProcess:
    """Pick the length-scale with the best profile likelihood."""
    best = None
    for length in LENGTH_SCALES:
        gp = GaussianProcess(X, y, length)
        if gp.constant:
            return gp
        ll = gp.log_marginal_likelihood()
        if best is None or ll > best[0]:
            best = (ll, gp)
    return best[1]


def expected_improvement(gp: GaussianProcess, Xs, y_best) -> np.ndarray:
    mu, s = gp.predict(Xs)
    ei = np.zeros_like(mu)
    ok = s > 0
    z = (y_best - mu[ok]) / s[ok]
    ei[ok] = (y_best - mu[ok]) * norm.cdf(z) + s[ok] * norm.pdf(z)
    return np.maximum(ei, 0.0)


@dataclass
class BayesOptTrace:
    X: np.ndarray
    y: np.ndarray
    length_scales: list
    jitter_events: int


def minimize_ei(evaluator, bounds, n_init=4, n_iter=10, seed=0, n_candidates=64, n_starts=4, callback=None):
    """Run GP-EI minimization of ``evaluator`` over the box ``bounds``.

    Returns ``(thetas, values, trace)`` with every evaluated point in order.
    """
    if n_init < 2:
        raise ValueError("n_init must be at least 2")
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    m = len(bounds)
    lo, width = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    rng = np.random.default_rng(seed)
    with warnings.catch_warnings():
        # balance only matters for powers of two; any n_init is fine here
        warnings.simplefilter("ignore", UserWarning)
        U = qmc.Sobol(m, scramble=True, seed=rng).random(n_init)
    X, y = [], []
    for u in U:
        X.append(u)
        y.append(float(evaluator(lo + width * u)))
        if callback:
            callback(lo + width * u, y[-1])
    lengths, jitters = [], 0
    cand = qmc.Sobol(m, scramble=True, seed=rng).random(n_candidates)
    for _ in range(n_iter):
        Xa, ya = np.array(X), np.array(y)
        gp = fit_gp(Xa, ya)
        lengths.append(gp.length)
        jitters += gp.jitter > 0
        y_best = ya.min()
        ei = expected_improvement(gp, cand, y_best)
        starts = cand[np.argsort(-ei)[:n_starts]]
        starts = np.vstack([starts, Xa[np.argmin(ya)]])
        best_u, best_ei = None, -1.0
        for x0 in starts:
            res = minimize(
                lambda u: -expected_improvement(gp, u[None], y_best)[0],
                x0,
                method="L-BFGS-B",
                bounds=[(0.0, 1.0)] * m,
            )
            val = -float(res.fun)
            if val > best_ei:
                best_u, best_ei = np.clip(res.x, 0.0, 1.0), val
        if best_ei <= 0 or np.min(np.sum((Xa - best_u) ** 2, axis=1)) < 1e-18:
            # nothing to gain: fall back to the least explored candidate
            dist = np.min(np.sum((cand[:, None] - Xa[None]) ** 2, axis=-1), axis=1)
            best_u = cand[np.argmax(dist)]
        X.append(best_u)
        y.append(float(evaluator(lo + width * best_u)))
        if callback:
            callback(lo + width * best_u, y[-1])
    Xa = np.array(X)
    return lo + width * Xa, np.array(y), BayesOptTrace(Xa, np.array(y), lengths, jitters)
