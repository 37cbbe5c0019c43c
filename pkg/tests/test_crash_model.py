import math

import numpy as np
import pytest

from crashgibo import gp
from crashgibo.crash_model import augment, virtual_value
from crashgibo.domain import Dataset, EvalOutcome
from crashgibo.gp import GPHyperparams


def hyp(d=1, noise=1e-6):
    return GPHyperparams(np.full(d, 0.25), 0.5, noise, 1.0)


def empty_model(d=1):
    return gp.fit(np.empty((0, d)), np.empty(0), hyp(d))


def test_virtual_value_under_prior_closed_form():
    m = empty_model()
    val = virtual_value(m, np.array([0.5]), np.array([0.2]), beta=3.0)
    assert val == pytest.approx(1.0 + 3.0 * math.sqrt(0.5), rel=1e-12)
    assert val == pytest.approx(3.1213, abs=1e-4)


def test_virtual_value_max_clause_dominates_with_zero_variance():
    # a crash exactly on a training point has zero posterior variance there
    h = hyp(noise=0.0)
    m = gp.fit(np.array([[0.6], [0.2]]), np.array([0.2, 0.9]), h)
    x_hat = np.array([0.6])   # mu there is 0.2
    x_star = np.array([0.2])  # mu there is 0.9
    val = virtual_value(m, x_hat, x_star, beta=3.0)
    assert val == pytest.approx(0.9, abs=1e-6)


def test_virtual_value_strictly_above_iterate_mean():
    rng = np.random.default_rng(0)
    h = hyp(d=2)
    m = gp.fit(rng.uniform(0, 1, (5, 2)), rng.normal(1, 0.5, 5), h)
    for _ in range(20):
        x_hat = rng.uniform(0, 1, 2)
        x_star = rng.uniform(0, 1, 2)
        mu_star, _ = gp.posterior(m, x_star)
        _, var_hat = gp.posterior(m, x_hat)
        if var_hat > 1e-12:
            assert virtual_value(m, x_hat, x_star, beta=3.0) > mu_star


def test_virtual_value_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        virtual_value(empty_model(), np.array([0.5]), np.array([0.5]), beta=0.0)


def test_augment_identity_without_crashes():
    rng = np.random.default_rng(1)
    ds = Dataset.empty(2)
    for i in range(4):
        ds = ds.record(rng.uniform(0, 1, 2), EvalOutcome.success(float(i)))
    aug = augment(ds, np.array([0.5, 0.5]), 3.0, hyp(2))
    assert aug.n_feasible == 4
    assert np.array_equal(aug.X_all, ds.X)
    assert np.array_equal(aug.y_all, ds.y)  # bit-exact


def test_augment_single_crash_under_prior():
    ds = Dataset.empty(1).record(np.array([0.5]), EvalOutcome.crash())
    aug = augment(ds, np.array([0.2]), 3.0, hyp())
    assert aug.n_feasible == 0
    assert aug.X_all.shape == (1, 1)
    assert aug.y_all[0] == pytest.approx(3.1213, abs=1e-4)


def test_augment_order_invariance():
    rng = np.random.default_rng(2)
    h = hyp(d=2)
    feas = [(rng.uniform(0, 1, 2), float(v)) for v in rng.normal(1, 0.3, 3)]
    crashes = [rng.uniform(0, 1, 2) for _ in range(3)]

    def build(order):
        ds = Dataset.empty(2)
        for x, v in feas:
            ds = ds.record(x, EvalOutcome.success(v))
        for i in order:
            ds = ds.record(crashes[i], EvalOutcome.crash())
        return augment(ds, np.array([0.5, 0.5]), 3.0, h)

    a = build([0, 1, 2])
    b = build([2, 0, 1])
    # same virtual value per crash location regardless of insertion order
    va = {tuple(x): y for x, y in zip(a.X_all[3:], a.y_all[3:])}
    vb = {tuple(x): y for x, y in zip(b.X_all[3:], b.y_all[3:])}
    assert va == vb


def test_penalty_monotone_in_beta():
    rng = np.random.default_rng(3)
    h = hyp(d=1)
    m = gp.fit(rng.uniform(0, 1, (3, 1)), rng.normal(1, 0.3, 3), h)
    x_hat, x_star = np.array([0.9]), np.array([0.1])
    vals = [virtual_value(m, x_hat, x_star, beta) for beta in (1.0, 2.0, 3.0, 5.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_gradient_points_away_from_crash():
    # one feasible point left of the iterate, one crash right of it: the
    # augmented-model gradient at the iterate must be positive (descent
    # direction moves away from the crash)
    h = hyp(d=1, noise=1e-4)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        y_obs = 1.0 + rng.normal(0.0, 0.01)
        ds = Dataset.empty(1)
        ds = ds.record(np.array([0.4]), EvalOutcome.success(y_obs))
        ds = ds.record(np.array([0.6]), EvalOutcome.crash())
        x_star = np.array([0.5])
        aug = augment(ds, x_star, 3.0, h)
        model = gp.fit(aug.X_all, aug.y_all, h)
        belief = gp.posterior_gradient(model, x_star)
        assert belief.mean[0] > 0.0
