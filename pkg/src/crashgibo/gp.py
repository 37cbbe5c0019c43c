"""Gaussian-process regression with a squared-exponential kernel and an
analytic posterior over the gradient.

The kernel is

    k(x, x') = s_f * exp(-0.5 * (x - x')^T L^-2 (x - x'))

with diagonal lengthscale matrix L, so k(x, x) = s_f (s_f is the prior
variance, not a standard deviation). Because the kernel is twice
differentiable, the joint of (grad f, y) is Gaussian and the gradient
posterior at a query point has closed-form mean and covariance:

    grad_mean(x*) = J(x*)^T C^-1 (y - mu0)
    grad_cov(x*)  = s_f L^-2 - J(x*)^T C^-1 J(x*)

where C = K(X, X) + noise * I and J(x*)[i, :] = d k(x*, x_i) / d x*.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

# Conditioning safeguard: diagonal jitter starts at JITTER_START * s_f and is
# escalated tenfold up to JITTER_MAX * s_f before fitting fails.
JITTER_START = 1e-10
JITTER_MAX = 1e-4

NOISE_FLOOR = 1e-8  # lower bound of the noise-variance search grid


class GPFitError(RuntimeError):
    """Covariance matrix could not be factorized even with maximum jitter."""


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel and likelihood constants; lengthscales are in normalized units."""

    lengthscales: np.ndarray   # (d,) diagonal of L
    signal_variance: float     # k(x, x) = signal_variance
    noise_variance: float
    prior_mean: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "prior_mean", float(self.prior_mean))

    @property
    def d(self) -> int:
        return self.lengthscales.size

    def with_noise(self, noise_variance: float) -> "GPHyperparams":
        return replace(self, noise_variance=float(noise_variance))


@dataclass(frozen=True)
class GradientBelief:
    """Posterior mean and covariance of the objective gradient at one point."""

    mean: np.ndarray  # (d,)
    cov: np.ndarray   # (d, d), symmetric PSD up to numerical tolerance


def kernel(x, x2, h: GPHyperparams) -> float:
    """Squared-exponential covariance between two points."""
    diff = (np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)) / h.lengthscales
    return h.signal_variance * float(np.exp(-0.5 * np.dot(diff, diff)))


def kernel_matrix(X, X2, h: GPHyperparams) -> np.ndarray:
    """Covariance matrix k(X, X2), shape (len(X), len(X2))."""
    Xs = np.asarray(X, dtype=float) / h.lengthscales
    X2s = np.asarray(X2, dtype=float) / h.lengthscales
    sq = (
        np.sum(Xs**2, axis=1)[:, None]
        + np.sum(X2s**2, axis=1)[None, :]
        - 2.0 * Xs @ X2s.T
    )
    return h.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_jacobian(x_star, x2, h: GPHyperparams) -> np.ndarray:
    """Derivative of k(x_star, x2) with respect to x_star, shape (d,)."""
    x_star = np.asarray(x_star, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return -(x_star - x2) / h.lengthscales**2 * kernel(x_star, x2, h)


def kernel_jacobian_matrix(x_star, X, h: GPHyperparams) -> np.ndarray:
    """Rows are d k(x_star, X[i]) / d x_star, shape (n, d)."""
    x_star = np.asarray(x_star, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.empty((0, x_star.size))
    k_row = kernel_matrix(x_star[None, :], X, h)[0]  # (n,)
    return -(x_star[None, :] - X) / h.lengthscales[None, :] ** 2 * k_row[:, None]


def kernel_cross_hessian(x, x2, h: GPHyperparams) -> np.ndarray:
    """Mixed second derivative d^2 k / (d x d x2^T), shape (d, d).

    At x == x2 this is s_f * L^-2, the prior covariance of the gradient.
    """
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    inv_sq = 1.0 / h.lengthscales**2
    scaled = (x - x2) * inv_sq
    return (np.diag(inv_sq) - np.outer(scaled, scaled)) * kernel(x, x2, h)


def prior_gradient_cov(h: GPHyperparams) -> np.ndarray:
    """Gradient covariance of the prior, s_f * L^-2."""
    return h.signal_variance * np.diag(1.0 / h.lengthscales**2)


@dataclass(frozen=True)
class GPModel:
    """Fitted posterior: hyperparameters plus the factorized covariance.

    Immutable after fit; safe for concurrent reads. ``chol`` is the lower
    Cholesky factor of C = K + noise * I + jitter * I and ``alpha`` caches
    C^-1 (y - mu0).
    """

    hyper: GPHyperparams
    X: np.ndarray      # (n, d)
    y: np.ndarray      # (n,)
    chol: np.ndarray   # (n, n) lower triangular
    alpha: np.ndarray  # (n,)
    jitter: float      # diagonal jitter actually applied

    @property
    def n(self) -> int:
        return self.X.shape[0]


def chol_with_jitter(K: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, escalating diagonal jitter on failure."""
    if K.shape[0] == 0:
        return np.empty((0, 0)), 0.0
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * signal_variance
    max_jitter = JITTER_MAX * signal_variance
    eye = np.eye(K.shape[0])
    while jitter <= max_jitter:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPFitError(
        f"covariance matrix is not positive definite even with jitter {max_jitter:g}; "
        "training inputs are likely duplicated with zero noise"
    )


def fit(X, y, h: GPHyperparams) -> GPModel:
    """Factorize the training covariance and cache the weight vector.

    Accepts an empty dataset, in which case the posterior equals the prior
    everywhere. The inputs may include virtual observations; they are treated
    exactly like real ones.
    """
    X = np.asarray(X, dtype=float).reshape(-1, h.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have the same number of rows")
    if X.shape[0] == 0:
        return GPModel(h, X, y, np.empty((0, 0)), np.empty(0), 0.0)
    C = kernel_matrix(X, X, h) + h.noise_variance * np.eye(X.shape[0])
    chol, jitter = chol_with_jitter(C, h.signal_variance)
    alpha = cho_solve((chol, True), y - h.prior_mean)
    return GPModel(h, X, y, chol, alpha, jitter)


def posterior(m: GPModel, x_star) -> tuple[float, float]:
    """Posterior mean and variance of the objective value at ``x_star``."""
    h = m.hyper
    if m.n == 0:
        return h.prior_mean, h.signal_variance
    x_star = np.asarray(x_star, dtype=float)
    kvec = kernel_matrix(x_star[None, :], m.X, h)[0]
    mean = h.prior_mean + float(kvec @ m.alpha)
    w = solve_triangular(m.chol, kvec, lower=True)
    var = h.signal_variance - float(w @ w)
    return mean, max(var, 0.0)


def posterior_gradient(m: GPModel, x_star) -> GradientBelief:
    """Posterior over the gradient of the objective at ``x_star``."""
    h = m.hyper
    x_star = np.asarray(x_star, dtype=float)
    prior_cov = prior_gradient_cov(h)
    if m.n == 0:
        return GradientBelief(np.zeros(h.d), prior_cov)
    J = kernel_jacobian_matrix(x_star, m.X, h)  # (n, d)
    mean = J.T @ m.alpha
    W = solve_triangular(m.chol, J, lower=True)  # (n, d)
    cov = prior_cov - W.T @ W
    cov = 0.5 * (cov + cov.T)
    return GradientBelief(mean, cov)


def log_marginal_likelihood(X, y, h: GPHyperparams) -> float:
    """Log evidence of the observations under the given hyperparameters."""
    X = np.asarray(X, dtype=float).reshape(-1, h.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    if n == 0:
        return 0.0
    C = kernel_matrix(X, X, h) + h.noise_variance * np.eye(n)
    chol, _ = chol_with_jitter(C, h.signal_variance)
    resid = y - h.prior_mean
    alpha = cho_solve((chol, True), resid)
    return float(
        -0.5 * resid @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def noise_grid(h: GPHyperparams, size: int = 33) -> np.ndarray:
    """Log-spaced candidate noise variances in [NOISE_FLOOR, s_f]."""
    return np.logspace(np.log10(NOISE_FLOOR), np.log10(h.signal_variance), size)


def fit_noise(X, y, h: GPHyperparams, grid_size: int = 33) -> GPHyperparams:
    """Pick the noise variance maximizing the log marginal likelihood.

    Only the noise is adapted; lengthscales, signal variance, and prior mean
    stay fixed. With fewer than two observations the input is returned
    unchanged.
    """
    X = np.asarray(X, dtype=float).reshape(-1, h.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 2:
        return h
    grid = noise_grid(h, grid_size)
    scores = [log_marginal_likelihood(X, y, h.with_noise(nv)) for nv in grid]
    return h.with_noise(grid[int(np.argmax(scores))])
