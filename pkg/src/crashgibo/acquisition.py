"""Batch planning by minimizing the posterior total variance of the gradient.

The total variance at the current iterate is the trace of the gradient
posterior covariance after hypothetically adding a batch of future
observations. It depends only on the batch locations, never on the unknown
future values, so it can be minimized over the batch coordinates directly;
both the value and its analytic gradient are cheap once the training-block
factorization is cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import gp
from .gp import GPFitError, GPModel

# Batch points closer than this (inf-norm) are nudged apart before the plan
# is returned; coincident columns would ruin the conditioning of later fits.
DUPLICATE_TOL = 1e-6
DUPLICATE_NUDGE = 1e-4

DEFAULT_N_STARTS = 8
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class DoEPlan:
    """Chosen evaluation batch and the total variance it achieves."""

    batch: np.ndarray  # (b, d), in the unit cube
    achieved_total_variance: float
    starts_tried: int


class TotalVarianceEvaluator:
    """Gradient total variance as a function of the hypothetical batch.

    Augmenting the training covariance C with a batch block and reading the
    gradient covariance trace at the iterate reduces, via a block Cholesky
    factorization, to

        tv(X') = base - tr(V^T B^-1 V),

    with B the batch Schur complement and V the batch part of the gradient
    cross-covariance after projecting out the training block. The training
    factorization is computed once per instance, so each candidate batch
    costs one b-by-b factorization plus matrix products.
    """

    def __init__(self, model: GPModel, x_star):
        self.model = model
        self.h = model.hyper
        self.x_star = np.asarray(x_star, dtype=float)
        self.prior_trace = float(np.trace(gp.prior_gradient_cov(self.h)))
        self.inv_sq = 1.0 / self.h.lengthscales**2
        if model.n > 0:
            # W1 = Lc^-1 J with J[i,:] = d k(x*, x_i) / d x*
            J = gp.kernel_jacobian_matrix(self.x_star, model.X, self.h)
            self.W1 = solve_triangular(model.chol, J, lower=True)
            self.base = self.prior_trace - float(np.sum(self.W1**2))
        else:
            self.W1 = np.empty((0, self.h.d))
            self.base = self.prior_trace

    def _blocks(self, X_prime: np.ndarray):
        """Shared factor pieces for value and gradient at one batch."""
        m, h = self.model, self.h
        b = X_prime.shape[0]
        K22 = gp.kernel_matrix(X_prime, X_prime, h)
        C22 = K22 + (h.noise_variance + m.jitter) * np.eye(b)
        J2 = gp.kernel_jacobian_matrix(self.x_star, X_prime, h)  # (b, d)
        if m.n > 0:
            K12 = gp.kernel_matrix(m.X, X_prime, h)              # (n, b)
            S = solve_triangular(m.chol, K12, lower=True)        # (n, b)
            B = C22 - S.T @ S
            V = J2 - S.T @ self.W1                               # (b, d)
        else:
            K12 = np.empty((0, b))
            S = np.empty((0, b))
            B = C22
            V = J2
        chol2, _ = gp.chol_with_jitter(B, h.signal_variance)
        G = cho_solve((chol2, True), V)                          # B^-1 V, (b, d)
        value = self.base - float(np.sum(V * G))
        return value, K12, K22, S, V, G

    def __call__(self, X_prime) -> float:
        X_prime = np.asarray(X_prime, dtype=float).reshape(-1, self.h.d)
        if X_prime.shape[0] == 0:
            return self.base
        return self._blocks(X_prime)[0]

    def value_and_grad(self, X_prime) -> tuple[float, np.ndarray]:
        """Total variance and its gradient w.r.t. the batch coordinates."""
        X_prime = np.asarray(X_prime, dtype=float).reshape(-1, self.h.d)
        b, d = X_prime.shape
        if b == 0:
            return self.base, np.zeros((0, d))
        value, K12, K22, S, V, G = self._blocks(X_prime)
        m = self.model
        H = G @ G.T  # (b, b)

        # d J2[j,:] / d X'[j,:] is the kernel cross Hessian at (x*, X'_j).
        delta_star = (self.x_star[None, :] - X_prime) * self.inv_sq  # (b, d)
        k_star = gp.kernel_matrix(self.x_star[None, :], X_prime, self.h)[0]  # (b,)

        grad = np.empty((b, d))
        if m.n > 0:
            # dK12[:, j] / d X'[j, :] for all j, stacked as (n, b*d).
            diff = -(X_prime[None, :, :] - m.X[:, None, :]) * self.inv_sq[None, None, :]
            Pk = diff * K12[:, :, None]                       # (n, b, d)
            Ps = solve_triangular(
                m.chol, Pk.reshape(m.n, b * d), lower=True
            ).reshape(m.n, b, d)
            w = self.W1 @ G.T - S @ H                         # (n, b): w_j - S h_j
        for j in range(b):
            D_j = (np.diag(self.inv_sq) - np.outer(delta_star[j], delta_star[j])) * k_star[j]
            g = D_j @ G[j]
            # dC22[l, :] / d X'[j, :] contributions through row/column j.
            Q = -(X_prime[j][None, :] - X_prime) * self.inv_sq[None, :] * K22[j][:, None]
            Q[j] = 0.0
            g -= Q.T @ H[j]
            if m.n > 0:
                g -= Ps[:, j, :].T @ w[:, j]
            grad[j] = -2.0 * g
        return value, grad


def total_variance(m: GPModel, x_star, X_prime) -> float:
    """Trace of the gradient posterior covariance after adding ``X_prime``.

    Equivalent to refitting the model with the batch appended under any
    pseudo-observations and reading off the gradient covariance trace at
    ``x_star``; the value is independent of the pseudo-observations.
    """
    return TotalVarianceEvaluator(m, x_star)(X_prime)


def _nudge_duplicates(batch: np.ndarray) -> np.ndarray:
    """Push near-coincident batch points apart, staying inside the cube."""
    batch = batch.copy()
    b = batch.shape[0]
    for j in range(1, b):
        for i in range(j):
            if np.max(np.abs(batch[j] - batch[i])) < DUPLICATE_TOL:
                shift = np.where(batch[j] > 0.5, -DUPLICATE_NUDGE, DUPLICATE_NUDGE)
                batch[j] = np.clip(batch[j] + shift, 0.0, 1.0)
    return batch


def plan_doe(
    m: GPModel,
    x_star,
    b: int,
    n_starts: int = DEFAULT_N_STARTS,
    rng=None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DoEPlan:
    """Plan the next evaluation batch of size ``b`` for the iterate ``x_star``.

    Runs ``n_starts`` bounded quasi-Newton searches with analytic gradients
    over the flattened batch coordinates and keeps the best minimum found,
    with earlier starts winning ties. The first start is the iterate
    perturbed by +-0.1 per coordinate, the rest are uniform around the
    iterate within two lengthscales. All points stay in the unit cube.
    """
    if b < 1:
        raise ValueError("batch size must be at least 1")
    rng = np.random.default_rng(rng)
    x_star = np.asarray(x_star, dtype=float)
    d = x_star.size
    tv = TotalVarianceEvaluator(m, x_star)

    radius = 2.0 * m.hyper.lengthscales
    starts = []
    signs = rng.choice([-1.0, 1.0], size=(b, d))
    starts.append(np.clip(x_star[None, :] + 0.1 * signs, 0.0, 1.0))
    for _ in range(max(n_starts - 1, 0)):
        offset = rng.uniform(-radius, radius, size=(b, d))
        starts.append(np.clip(x_star[None, :] + offset, 0.0, 1.0))

    def objective(flat: np.ndarray):
        try:
            value, grad = tv.value_and_grad(flat.reshape(b, d))
        except GPFitError:
            return tv.base, np.zeros(b * d)  # hopelessly conditioned batch
        return value, grad.ravel()

    best_val = np.inf
    best_batch = starts[0]
    bounds = [(0.0, 1.0)] * (b * d)
    for start in starts[:n_starts]:
        res = minimize(
            objective,
            start.ravel(),
            method="L-BFGS-B",
            jac=True,
            bounds=bounds,
            options={"maxiter": max_iter},
        )
        if res.fun < best_val:
            best_val = float(res.fun)
            best_batch = res.x.reshape(b, d)

    batch = _nudge_duplicates(np.clip(best_batch, 0.0, 1.0))
    return DoEPlan(batch, tv(batch), len(starts))
