import math

import numpy as np
import pytest

import raresim.local as local
from raresim.core import DesignSet, RngStream, Sample, lhs_sample
from raresim.gp import Prediction
from raresim.limit_states import make_limit_state
from raresim.local import (
    BallQuery,
    ExactSurrogate,
    GPSurrogate,
    LevelContext,
    RefinementPolicy,
    StepInfo,
    default_N0,
    error_indicator,
    local_start,
    local_step,
    misclassification_probability,
    random_refine_probability,
    refine_select,
    select_ball,
    u_function,
)


def design_1d(values):
    ds = DesignSet(1)
    for v in values:
        ds.add(np.array([v]), float(v))
    return ds


class FixedModel:
    """Constant prediction everywhere."""

    def __init__(self, mu, sigma):
        self.mu, self.sigma = mu, sigma

    def predict(self, x):
        return Prediction(self.mu, self.sigma)

    def predict_many(self, X):
        n = len(np.atleast_2d(X))
        return np.full(n, self.mu), np.full(n, self.sigma)


class FixedSurrogate:
    """Surrogate whose prediction depends only on a lookup by first coordinate."""

    def __init__(self, design, table, N0=2):
        self.design = design
        self.table = table
        self.N0 = N0
        self.calls = []

    def fit_at(self, x):
        self.calls.append(np.array(x))
        mu, sd = self.table(np.asarray(x))
        return local.LocalFit(BallQuery(np.asarray(x, float), 1.0, np.arange(min(self.N0, len(self.design)))),
                              FixedModel(mu, sd))


# arithmetic examples

def test_default_N0():
    assert default_N0(2) == 9
    assert default_N0(1) == 3
    assert default_N0(100, high_dim=True) == 101
    with pytest.raises(ValueError):
        default_N0(0)


def test_select_ball():
    ds = design_1d([0, 1, 2, 3])
    b = select_ball(np.array([0.6]), ds, 2)
    assert b.members.tolist() == [1, 0]
    assert b.R == pytest.approx(0.6)
    b = select_ball(np.array([2.0]), ds, 1)
    assert b.members.tolist() == [2] and b.R == 0.0
    with pytest.raises(ValueError, match="warm-start"):
        select_ball(np.array([0.0]), ds, 5)


def test_error_indicator():
    assert error_indicator(Prediction(3.0, 0.0)) == 0.0
    assert error_indicator(Prediction(2.0, 0.1)) == pytest.approx(0.196)
    assert error_indicator(Prediction(-2.0, 0.1)) == pytest.approx(0.196)
    assert error_indicator(Prediction(0.0, 0.1)) == math.inf


def test_random_refine_probability():
    for j in (1, 2, 5):
        assert random_refine_probability(1, j) == pytest.approx(0.01)
    assert random_refine_probability(2, 1) == pytest.approx(0.005)
    assert random_refine_probability(2, 2) == pytest.approx(0.000625)
    with pytest.raises(ValueError):
        random_refine_probability(0, 1)


def test_misclassification_probability():
    assert misclassification_probability(1.0, 0.3, 1.0) == 0.5
    assert misclassification_probability(1.0 + 1.96 * 0.2, 0.2, 1.0) == pytest.approx(0.024997895, abs=1e-8)
    assert misclassification_probability(2.0, 0.0, 1.0) == 0.0
    assert misclassification_probability(1.0, 0.0, 1.0) == 0.5


def test_u_function_selection_rule():
    U = u_function([0.0, 0.25, 0.5], [0.1, 0.1, 0.1], 0.3)
    assert int(np.argmin(U)) == 1
    assert u_function(0.3, 0.0, 0.3) == 0.0
    assert u_function(0.4, 0.0, 0.3) == math.inf


def test_refine_select_minimises_u_over_pool():
    class Linear:
        def predict_many(self, X):
            X = np.atleast_2d(X)
            return X[:, 0], np.full(len(X), 0.2)

    ball = BallQuery(np.array([0.0, 0.0]), 1.0, np.arange(3))
    policy = RefinementPolicy(pool_size=50)
    theta, flagged = refine_select(ball, Linear(), 0.3, policy, RngStream(4))
    pool = local.uniform_ball(ball.center, 1.0, 50, RngStream(4))
    assert not flagged
    np.testing.assert_array_equal(theta, pool[np.argmin(np.abs(pool[:, 0] - 0.3))])
    assert np.all(np.linalg.norm(pool, axis=1) <= 1.0)


def test_refine_select_empty_pool_is_flagged():
    ds = design_1d([0.0])
    ball = BallQuery(np.array([0.0]), 0.0, np.arange(1))
    theta, flagged = refine_select(ball, FixedModel(0.0, 1.0), 0.0, RefinementPolicy(pool_size=5), RngStream(0), ds)
    assert flagged
    assert theta[0] != 0.0 and ds.find(theta) < 0


def test_policy_validation():
    with pytest.raises(ValueError):
        RefinementPolicy(gamma_T=0.0)
    with pytest.raises(ValueError):
        RefinementPolicy(max_refines_per_step=0)


# local_step

NO_RANDOM = RefinementPolicy(beta1=0.0)


def _g11_setup(n=30, seed=0):
    g = make_limit_state("g11", d=2)
    ds = DesignSet(2)
    X = lhs_sample(n, 2, RngStream(seed))
    ds.add_many(X, g.raw(X))
    return g, ds


def test_exact_surrogate_step_needs_no_true_evaluation():
    g, ds = _g11_setup()
    sur = ExactSurrogate(ds, 9, g)
    prev = Sample(np.array([1.0, 1.0]), float(g.raw(np.array([1.0, 1.0]))), True)
    info = StepInfo()
    for v in RngStream(1).normal((50, 2)):
        nxt, used = local_step(v, prev, ds, LevelContext(3.0), sur, g, NO_RANDOM, RngStream(2), info)
        assert not used
        assert (nxt.coords is v) == (g.raw(v) <= 3.0)
    assert g.calls == 0 and info.n_true == 0 and len(ds) == 30


def test_straddling_interval_forces_true_evaluation():
    g, ds = _g11_setup()
    sur = FixedSurrogate(ds, lambda x: (1.0, 0.01))  # eps = 0.0392 < gamma_T, interval [0.98, 1.02]
    v = np.array([2.0, 0.3])  # true g = 4 - 2.3/sqrt(2) ~ 2.37 > c
    prev = Sample(np.array([2.5, 2.5]), float(g.raw(np.array([2.5, 2.5]))), True)
    info = StepInfo()
    nxt, used = local_step(v, prev, ds, LevelContext(1.0), sur, g, NO_RANDOM, RngStream(0), info)
    assert used and info.nested_fallback and not info.budget_exhausted
    assert g.calls == 1 and ds.find(v) >= 0
    assert nxt is prev  # the true value rejects v although mu <= c


def test_nestedness_violation_forces_true_evaluation():
    g, ds = _g11_setup()
    sur = FixedSurrogate(ds, lambda x: (1.5, 0.001))
    v = np.array([2.0, 2.0])  # true g = 4 - 4/sqrt(2) ~ 1.17
    prev = Sample(np.array([2.5, 2.5]), 0.46, True)
    ctx = LevelContext(c_j=2.0, c_prev=1.2)
    info = StepInfo()
    nxt, used = local_step(v, prev, ds, ctx, sur, g, NO_RANDOM, RngStream(0), info)
    assert used and info.nested_fallback
    assert nxt.is_true and nxt.value == pytest.approx(4 - 4 / math.sqrt(2))


def test_budget_exhaustion_evaluates_truly():
    g, ds = _g11_setup()
    sur = FixedSurrogate(ds, lambda x: (1.0, 1.0))  # eps = 3.92 everywhere
    v = np.array([0.5, 0.5])
    prev = Sample(np.array([2.5, 2.5]), 0.46, True)
    info = StepInfo()
    n_design = len(ds)
    nxt, used = local_step(v, prev, ds, LevelContext(3.5), sur, g, NO_RANDOM, RngStream(0), info)
    assert used and info.budget_exhausted
    assert info.n_refines == 5
    assert info.n_true == 6 == g.calls
    # every insertion is a paid-for true evaluation
    assert len(ds) - n_design == g.calls
    assert nxt.is_true and nxt.value == pytest.approx(g.raw(v))


def test_confident_step_costs_nothing():
    g, ds = _g11_setup()
    sur = FixedSurrogate(ds, lambda x: (2.0, 0.001))
    prev = Sample(np.array([2.5, 2.5]), 0.46, True)
    info = StepInfo()
    nxt, used = local_step(np.array([0.1, 0.2]), prev, ds, LevelContext(3.0), sur, g, NO_RANDOM, RngStream(0), info)
    assert not used and g.calls == 0
    assert not nxt.is_true and nxt.value == 2.0


def test_refinement_target_is_symmetric(monkeypatch):
    g, ds = _g11_setup()
    targets = []

    def fake_refine(ball, model, c, policy, rng, design=None):
        targets.append((ball.center.copy(), c))
        return np.array([9.0 + len(targets), 0.0]), False

    monkeypatch.setattr(local, "refine_select", fake_refine)
    a, b = np.array([0.5, 0.5]), np.array([-0.5, 0.2])
    # uncertain at a only; confident at b
    table = lambda x: (1.0, 1.0) if np.allclose(x, a) else (2.0, 0.001)
    pol = RefinementPolicy(beta1=0.0, max_refines_per_step=1)
    local_step(a, Sample(b, 2.0, True), ds, LevelContext(3.0), FixedSurrogate(ds, table), g, pol, RngStream(0))
    local_step(b, Sample(a, 2.0, True), ds, LevelContext(3.0), FixedSurrogate(ds, table), g, pol, RngStream(0))
    np.testing.assert_array_equal(targets[0][0], a)
    np.testing.assert_array_equal(targets[1][0], a)
    assert targets[0][1] == targets[1][1] == 0.0


def test_random_refinement_uses_negated_threshold(monkeypatch):
    g, ds = _g11_setup()
    seen = []

    def fake_refine(ball, model, c, policy, rng, design=None):
        seen.append(c)
        return np.array([7.0 + len(seen), 1.0]), False

    monkeypatch.setattr(local, "refine_select", fake_refine)
    pol = RefinementPolicy(beta1=1.0, max_refines_per_step=3)  # coin always fires at s = 1
    sur = FixedSurrogate(ds, lambda x: (2.0, 0.001))
    info = StepInfo()
    local_step(np.array([0.1, 0.1]), Sample(np.zeros(2), 4.0, True), ds, LevelContext(2.5), sur, g, pol, RngStream(0), info)
    assert seen == [-2.5] * 3
    assert info.random_refines == 3


def test_g11_level_one_classification():
    g = make_limit_state("g11", d=2)
    ds = DesignSet(2)
    rng = RngStream(5)
    X = lhs_sample(1000, 2, rng)
    G = g.raw(X)
    c1 = 0.5 * np.add(*np.sort(G)[99:101])
    ds.add_many(X[:100], G[:100])
    sur = GPSurrogate(ds, default_N0(2))
    seed_idx = int(np.argmin(G))
    prev = Sample(X[seed_idx], float(G[seed_idx]), True)
    ctl = RngStream(5, 1)
    agree = 0
    cands = RngStream(6).normal((100, 2)) * 0.8 + X[seed_idx] * 0.6
    for s, v in enumerate(cands, start=1):
        nxt, _ = local_step(v, prev, ds, LevelContext(c1, j=1, s=s), sur, g, RefinementPolicy(), ctl)
        agree += (nxt.coords is v) == bool(g.raw(v) <= c1)
    assert agree >= 95


# local_start

def test_local_start_warm_start_then_bypass():
    g, _ = _g11_setup()
    ds = DesignSet(2)
    sur = ExactSurrogate(ds, 9, g)
    pts = lhs_sample(40, 2, RngStream(2))
    out = [local_start(p, ds, g, sur, RefinementPolicy(), i, 10) for i, p in enumerate(pts)]
    assert all(s.is_true for s in out[:10])
    assert not any(s.is_true for s in out[10:])
    assert g.calls == 10 and len(ds) == 10
    np.testing.assert_allclose([s.value for s in out], g.raw(pts))


def test_local_start_stores_upper_bound():
    g, ds = _g11_setup()
    sur = FixedSurrogate(ds, lambda x: (2.0, 0.01), N0=5)
    s = local_start(np.zeros(2), ds, g, sur, RefinementPolicy(), 50, 10)
    assert not s.is_true and s.value == pytest.approx(2.0 + 1.96 * 0.01)
    s = local_start(np.ones(2) * 0.3, ds, g, FixedSurrogate(ds, lambda x: (2.0, 1.0)), RefinementPolicy(), 50, 10)
    assert s.is_true and g.calls == 1
