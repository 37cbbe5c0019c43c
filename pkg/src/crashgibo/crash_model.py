"""Virtual observations for crashed evaluations.

A crash yields no objective value, but ignoring it would let the surrogate
wander back into the infeasible region. Each crash location is therefore
assigned an adaptive penalty: optimistic where the model is confident, large
where it is not, and never below the model's value at the current iterate so
the estimated slope always points away from observed crashes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gp
from .domain import Dataset
from .gp import GPHyperparams, GPModel


@dataclass(frozen=True)
class AugmentedDataset:
    """Feasible observations followed by virtual crash observations."""

    X_all: np.ndarray  # (n + m, d)
    y_all: np.ndarray  # (n + m,)
    n_feasible: int


def virtual_value(m_feasible: GPModel, x_hat, x_star, beta: float) -> float:
    """Adaptive penalty for a crash at ``x_hat`` given the feasible-only model.

    Returns max(mu(x_hat), mu(x_star)) + beta * sqrt(var(x_hat)). The max
    clause guarantees a non-negative slope from the iterate toward the crash;
    the beta term places the penalty outside the model's confidence band.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    mu_hat, var_hat = gp.posterior(m_feasible, x_hat)
    mu_star, _ = gp.posterior(m_feasible, x_star)
    return max(mu_hat, mu_star) + beta * math.sqrt(max(var_hat, 0.0))


def augment(ds: Dataset, x_star, beta: float, h: GPHyperparams) -> AugmentedDataset:
    """Build the dataset used for all surrogate fits at the current iterate.

    Virtual values are recomputed from scratch from the feasible-only
    posterior on every call, each crash independently of the others, so they
    track the evolving model and do not depend on crash ordering.
    """
    if ds.n_crash == 0:
        return AugmentedDataset(ds.X, ds.y, ds.n_success)
    m = gp.fit(ds.X, ds.y, h)
    y_hat = np.array([virtual_value(m, x_hat, x_star, beta) for x_hat in ds.X_crash])
    X_all = np.vstack([ds.X, ds.X_crash])
    y_all = np.concatenate([ds.y, y_hat])
    return AugmentedDataset(X_all, y_all, ds.n_success)
