"""Local Bayesian optimization loop with crash handling.

Each iteration plans a small evaluation batch that sharpens the gradient
estimate at the current iterate, takes a lengthscale-normalized gradient
descent step on the surrogate mean, and verifies the new iterate by
evaluating it. If the verification crashes, the iterate is reset to the best
previously evaluated feasible point under the current surrogate, so the
returned parameterization is always one that actually ran.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import acquisition, crash_model, gp
from .domain import Dataset, EvalOutcome, SearchDomain, denormalize, normalize
from .gp import GPHyperparams

KIND_INIT = "init"
KIND_DOE = "doe"
KIND_STEP = "step-candidate"
KIND_RANDOM = "random"

STALL_GRAD_NORM = 1e-12


class InfeasibleStartError(RuntimeError):
    """The initial parameterization crashed; no feasible anchor exists."""


class Objective(Protocol):
    """A costly black-box evaluation, deterministic for a fixed seed."""

    def domain(self) -> SearchDomain: ...

    def evaluate(self, x_raw: np.ndarray, seed: int) -> EvalOutcome: ...


@dataclass(frozen=True)
class GiboConfig:
    """Optimizer settings. Defaults follow the standard hyperparameters used
    for every benchmark case: batch size d+1, step schedule 0.25..0.125 with
    cosine decay, lengthscales 0.25 on the unit cube, signal variance 0.5,
    prior mean 1."""

    max_evals: int
    seed: int = 0
    batch_size: int | None = None      # None resolves to d + 1
    eta_max: float = 0.25
    eta_min: float = 0.125
    n_iterations: int | None = None    # cosine horizon; None resolves from budget
    beta: float = 3.0
    objective_scale: float = 1.0
    optimize_noise: bool = True
    n_starts: int = 8
    lengthscale: float = 0.25
    signal_variance: float = 0.5
    noise_variance: float = 1e-4
    prior_mean: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta_min <= self.eta_max:
            raise ValueError("require 0 < eta_min <= eta_max")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.objective_scale <= 0:
            raise ValueError("objective_scale must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    def resolve_batch(self, d: int) -> int:
        return self.batch_size if self.batch_size is not None else d + 1

    def resolve_iterations(self, b: int) -> int:
        if self.n_iterations is not None:
            return max(self.n_iterations, 1)
        return max(math.ceil(self.max_evals / (b + 1)), 1)

    def hyperparams(self, d: int) -> GPHyperparams:
        return GPHyperparams(
            lengthscales=np.full(d, self.lengthscale),
            signal_variance=self.signal_variance,
            noise_variance=self.noise_variance,
            prior_mean=self.prior_mean,
        )


@dataclass(frozen=True)
class EvalRecord:
    """One objective evaluation: where, what happened, and when."""

    x: np.ndarray          # normalized coordinates
    x_raw: np.ndarray      # raw parameter units
    outcome: EvalOutcome   # raw objective value or crash
    iteration: int         # 0 for the initial evaluation and random search
    kind: str


@dataclass(frozen=True)
class TuningRun:
    """Full audit trail of one optimization run."""

    evaluations: tuple[EvalRecord, ...]
    iterates: tuple[np.ndarray, ...]           # normalized iterate after each iteration
    resets: tuple[tuple[int, np.ndarray], ...]  # (iteration, reset target)
    best_trace: tuple[float, ...]              # best feasible objective after each evaluation
    final_objective: float                     # objective recorded at the final iterate
    domain: SearchDomain

    @property
    def n_evals(self) -> int:
        return len(self.evaluations)

    @property
    def n_crashes(self) -> int:
        return sum(1 for r in self.evaluations if r.outcome.crashed)

    @property
    def final_x(self) -> np.ndarray | None:
        return self.iterates[-1] if self.iterates else None

    @property
    def final_x_raw(self) -> np.ndarray | None:
        x = self.final_x
        return None if x is None else denormalize(x, self.domain)

    @property
    def has_feasible(self) -> bool:
        return any(r.outcome.is_success for r in self.evaluations)


def cosine_eta(k: int, n_iterations: int, eta_max: float, eta_min: float) -> float:
    """Cosine-decayed raw step size, eta_max at k=0 down to eta_min at the horizon."""
    if n_iterations < 1:
        raise ValueError("n_iterations must be at least 1")
    if not 0 <= k <= n_iterations:
        raise ValueError("iteration index outside the schedule horizon")
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * k / n_iterations))


def step_size(eta_hat: float, grad_mean: np.ndarray, h: GPHyperparams) -> float:
    """Normalize the raw step size by the lengthscale metric of the gradient.

    The resulting update -eta * g moves exactly eta_hat in lengthscale units
    regardless of the gradient magnitude. A vanishing gradient yields 0 (the
    step is stalled).
    """
    g = np.asarray(grad_mean, dtype=float)
    if np.linalg.norm(g) <= STALL_GRAD_NORM:
        return 0.0
    return eta_hat / math.sqrt(float(np.sum((g / h.lengthscales) ** 2)))


@dataclass
class _Trail:
    """Mutable bookkeeping shared by both optimizers."""

    dom: SearchDomain
    scale: float
    seed: int
    max_evals: int
    dataset: Dataset = None
    records: list = field(default_factory=list)
    best_trace: list = field(default_factory=list)
    best_value: float = math.inf

    def __post_init__(self):
        self.dataset = Dataset.empty(self.dom.d)
        # Pre-drawn, order-independent evaluation seeds.
        children = np.random.SeedSequence(self.seed).spawn(self.max_evals + 1)
        self.eval_seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children[:-1]]
        self.doe_rng = np.random.default_rng(children[-1])

    @property
    def evals_used(self) -> int:
        return len(self.records)

    @property
    def budget_left(self) -> int:
        return self.max_evals - self.evals_used

    def evaluate(self, obj: Objective, x: np.ndarray, iteration: int, kind: str) -> EvalOutcome:
        """Run one evaluation, record it, and update the best-so-far trace."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        x_raw = denormalize(x, self.dom)
        outcome = obj.evaluate(x_raw, self.eval_seeds[self.evals_used])
        self.records.append(EvalRecord(x, x_raw, outcome, iteration, kind))
        if outcome.is_success:
            # The surrogate sees standardized values; logs keep raw units.
            scaled = EvalOutcome.success(outcome.value / self.scale)
            self.best_value = min(self.best_value, outcome.value)
        else:
            scaled = outcome
        self.dataset = self.dataset.record(x, scaled)
        self.best_trace.append(self.best_value)
        return outcome


def run_gibo(obj: Objective, x0_raw, cfg: GiboConfig) -> TuningRun:
    """Run the crash-aware local optimizer from a feasible starting point.

    The initial point is always evaluated first (it anchors crash resets);
    a crash there aborts with :class:`InfeasibleStartError`. The loop runs
    until the evaluation budget, counting crashes, is exhausted.
    """
    dom = obj.domain()
    d = dom.d
    b = cfg.resolve_batch(d)
    if cfg.max_evals < b + 2:
        raise ValueError("budget must cover the initial point plus one full iteration")
    horizon = cfg.resolve_iterations(b)
    hyper = cfg.hyperparams(d)
    trail = _Trail(dom, cfg.objective_scale, cfg.seed, cfg.max_evals)

    x_star = normalize(np.asarray(x0_raw, dtype=float), dom)
    out0 = trail.evaluate(obj, x_star, 0, KIND_INIT)
    if out0.crashed:
        raise InfeasibleStartError(
            f"initial parameterization {np.asarray(x0_raw)} crashed; "
            "pick a feasible starting point"
        )

    iterates = [x_star]
    resets: list[tuple[int, np.ndarray]] = []
    final_objective = out0.value

    def refit() -> gp.GPModel:
        aug = crash_model.augment(trail.dataset, x_star, cfg.beta, hyper)
        return gp.fit(aug.X_all, aug.y_all, hyper)

    k = 0
    while trail.budget_left > 0:
        iteration = k + 1
        model = refit()
        plan = acquisition.plan_doe(
            model, x_star, b, n_starts=cfg.n_starts, rng=trail.doe_rng
        )
        for point in plan.batch:
            if trail.budget_left == 0:
                break
            trail.evaluate(obj, point, iteration, KIND_DOE)
        if trail.budget_left == 0:
            break

        model = refit()
        belief = gp.posterior_gradient(model, x_star)
        eta_hat = cosine_eta(min(k, horizon), horizon, cfg.eta_max, cfg.eta_min)
        eta = step_size(eta_hat, belief.mean, hyper)
        if eta > 0.0:
            candidate = np.clip(x_star - eta * belief.mean, 0.0, 1.0)
            outcome = trail.evaluate(obj, candidate, iteration, KIND_STEP)
            if outcome.crashed:
                # Reset to the evaluated feasible point with the lowest
                # surrogate mean, under the model that includes this crash.
                x_star = _reset_target(trail.dataset, x_star, cfg.beta, hyper)
                resets.append((iteration, x_star))
                final_objective = _recorded_value(trail.records, x_star)
            else:
                x_star = candidate
                final_objective = outcome.value
        # A stalled step keeps the iterate; fresh data may unlock a direction.
        iterates.append(x_star)

        if cfg.optimize_noise and trail.dataset.n_success >= 2:
            hyper = gp.fit_noise(trail.dataset.X, trail.dataset.y, hyper)
        k += 1

    return TuningRun(
        evaluations=tuple(trail.records),
        iterates=tuple(iterates),
        resets=tuple(resets),
        best_trace=tuple(trail.best_trace),
        final_objective=final_objective,
        domain=dom,
    )


def _reset_target(ds: Dataset, x_star, beta: float, hyper: GPHyperparams) -> np.ndarray:
    """Feasible evaluated location minimizing the augmented posterior mean."""
    aug = crash_model.augment(ds, x_star, beta, hyper)
    model = gp.fit(aug.X_all, aug.y_all, hyper)
    means = [gp.posterior(model, x)[0] for x in ds.X]
    return ds.X[int(np.argmin(means))].copy()


def _recorded_value(records: list[EvalRecord], x: np.ndarray) -> float:
    """Most recent successful objective recorded at exactly ``x``."""
    for rec in reversed(records):
        if rec.outcome.is_success and np.array_equal(rec.x, x):
            return rec.outcome.value
    raise RuntimeError("no successful evaluation recorded at the reset target")


def run_random_search(obj: Objective, budget: int, seed: int) -> TuningRun:
    """Uniform random search over the box with the same budget accounting.

    Crashes are recorded but contribute no objective value. The returned
    iterate is the best feasible sample; a run where everything crashed has
    no iterate and ``has_feasible`` is False.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    dom = obj.domain()
    trail = _Trail(dom, 1.0, seed, budget)
    sample_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD0E)))
    samples = sample_rng.uniform(0.0, 1.0, size=(budget, dom.d))

    best_x = None
    best_val = math.inf
    for x in samples:
        outcome = trail.evaluate(obj, x, 0, KIND_RANDOM)
        if outcome.is_success and outcome.value < best_val:
            best_val = outcome.value
            best_x = np.clip(x, 0.0, 1.0)

    return TuningRun(
        evaluations=tuple(trail.records),
        iterates=(best_x,) if best_x is not None else (),
        resets=(),
        best_trace=tuple(trail.best_trace),
        final_objective=best_val,
        domain=dom,
    )
