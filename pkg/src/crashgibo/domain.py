"""Search-space primitives shared by the optimizer, crash model, and harness.

All optimizer-internal math lives on the normalized unit cube. Raw parameter
units appear only at the objective boundary (the plant simulator and the CSV
logs), which keeps the fixed GP lengthscales meaningful across benchmark
cases with very different parameter ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SearchDomain:
    """Axis-aligned box of raw controller parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if lower.size < 1:
            raise ValueError("domain needs at least one dimension")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must lie strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.size


def normalize(x_raw, dom: SearchDomain) -> np.ndarray:
    """Map raw coordinates into the unit cube, clipping to [0, 1]."""
    x_raw = np.asarray(x_raw, dtype=float)
    if x_raw.shape != (dom.d,):
        raise ValueError(f"expected {dom.d} coordinates, got shape {x_raw.shape}")
    return np.clip((x_raw - dom.lower) / (dom.upper - dom.lower), 0.0, 1.0)


def denormalize(x, dom: SearchDomain) -> np.ndarray:
    """Inverse of :func:`normalize` on the box."""
    x = np.asarray(x, dtype=float)
    if x.shape != (dom.d,):
        raise ValueError(f"expected {dom.d} coordinates, got shape {x.shape}")
    return dom.lower + x * (dom.upper - dom.lower)


@dataclass(frozen=True)
class EvalOutcome:
    """Result of one objective evaluation: a finite value, or a crash.

    A crash carries no value at all; the evaluation aborted before the
    objective could be measured.
    """

    value: float | None

    @classmethod
    def success(cls, y: float) -> "EvalOutcome":
        y = float(y)
        if not math.isfinite(y):
            raise ValueError("successful evaluations must carry a finite value")
        return cls(value=y)

    @classmethod
    def crash(cls) -> "EvalOutcome":
        return cls(value=None)

    @property
    def is_success(self) -> bool:
        return self.value is not None

    @property
    def crashed(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class Dataset:
    """Successful observations (X, y) plus crash locations, all normalized.

    Immutable value type: :meth:`record` returns a new dataset. Repeated
    coordinates are kept as distinct records.
    """

    X: np.ndarray        # (n, d) successful locations
    y: np.ndarray        # (n,) observed objective values
    X_crash: np.ndarray  # (m, d) crash locations

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.empty((0, d)), np.empty(0), np.empty((0, d)))

    def record(self, x, outcome: EvalOutcome) -> "Dataset":
        """Append one evaluation to exactly one of (X, y) or X_crash."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if outcome.is_success:
            return Dataset(np.vstack([self.X, x]), np.append(self.y, outcome.value), self.X_crash)
        return Dataset(self.X, self.y, np.vstack([self.X_crash, x]))

    @property
    def n_success(self) -> int:
        return self.X.shape[0]

    @property
    def n_crash(self) -> int:
        return self.X_crash.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]
