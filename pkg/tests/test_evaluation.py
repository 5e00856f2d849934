import math

import numpy as np
import pytest

from conftest import synthetic_market
from erep.ensemble import default_params, run_erep
from erep.errors import DataError, ParameterError
from erep.evaluation import (
    SharpeUndefined,
    best_fixed_allocation,
    candidate_runs,
    cumulative_wealth,
    lemma2_report,
    regret_curve,
    replay_curvature_terms,
    report_regret,
    sharpe_ratio,
    walk_forward_from_runs,
    walk_forward_lambda,
    wealth_matrix,
    window_sensitivity,
)
from erep.market_data import Grouping, MarketSeries
from erep.optimizer import group_norm
from erep.strategies import StrategySpec
from oracles import group_norm_direct, sharpe_direct, simplex_points

BASES = (StrategySpec("EG"), StrategySpec("OLMAR", window=4))


def test_cumulative_wealth_examples(rng):
    X = rng.uniform(0.9, 1.1, size=(10, 3))
    assert cumulative_wealth(np.full((10, 3), 1 / 3), np.ones((10, 3))) == 1.0
    B = np.tile([1.0, 0, 0], (10, 1))
    assert cumulative_wealth(B, X) == pytest.approx(np.prod(X[:, 0]), rel=1e-14)
    with pytest.raises(ValueError):
        cumulative_wealth(B[:5], X)
    with pytest.raises(DataError):
        cumulative_wealth(np.tile([0, 0, 1.0], (10, 1)), np.column_stack([X[:, :2], np.zeros(10)]))


def test_sharpe_examples(rng):
    assert sharpe_ratio([0.01, -0.01] * 50) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(SharpeUndefined):
        sharpe_ratio([0.003] * 20)
    with pytest.raises(SharpeUndefined):
        sharpe_ratio([0.01])
    r = rng.normal(0.001, 0.01, 300)
    assert sharpe_ratio(r) == pytest.approx(sharpe_direct(r), rel=1e-12)
    assert sharpe_ratio(rng.permutation(r)) == pytest.approx(sharpe_ratio(r), rel=1e-12)
    assert sharpe_ratio(r, 12) == pytest.approx(sharpe_direct(r, 12), rel=1e-12)


# ---------------------------------------------------------------- hindsight


def test_hindsight_dominating_column(rng):
    T, n = 40, 3
    X = rng.uniform(0.9, 1.1, size=(T, n))
    P = np.zeros((T, n, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    X[:, 0] = X[:, 1] * 1.05  # column 0 always wins
    sol = best_fixed_allocation(P, X, 0.0, Grouping.single(2))
    np.testing.assert_allclose(sol.w_star, [1, 0], atol=1e-7)
    assert sol.converged


def test_hindsight_flat_market():
    P = np.tile(np.eye(3)[:, :2][None], (5, 1, 1))
    sol = best_fixed_allocation(P, np.ones((5, 3)), 0.0, Grouping.single(2))
    assert sol.flat and sol.certificate == 0.0
    np.testing.assert_array_equal(sol.w_star, [0.5, 0.5])
    # with a penalty the exposure term still picks the spread allocation
    groups = Grouping.from_sets([[0], [1]], n=2)
    sol = best_fixed_allocation(P, np.ones((5, 3)), 0.3, groups)
    np.testing.assert_allclose(sol.w_star, [0.5, 0.5], atol=1e-6)


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
def test_hindsight_matches_grid(rng, lam):
    T = 50
    X = rng.uniform(0.9, 1.1, size=(T, 4))
    P = rng.dirichlet(np.ones(4), size=(T, 3)).transpose(0, 2, 1)
    groups = [[0, 1], [2]]
    sol = best_fixed_allocation(P, X, lam, Grouping.from_sets(groups, n=3))
    R = wealth_matrix(P, X)
    W = simplex_points(3, 1 / 200)
    vals = -np.log(W @ R.T).sum(axis=1) + T * lam * np.array([group_norm_direct(w, groups) for w in W])
    assert sol.objective <= vals.min() + 1e-9
    assert sol.certificate <= 1e-6
    ref = -np.log(R @ sol.w_star).sum() + T * lam * group_norm_direct(sol.w_star, groups)
    assert sol.objective == pytest.approx(ref, abs=1e-10)


def test_regret_curve_flat_market_is_zero():
    T = 30
    P = np.tile(np.full((2, 2), 0.5)[None], (T, 1, 1))
    sol = best_fixed_allocation(P, np.ones((T, 2)), 0.0, Grouping.single(2))
    reg = regret_curve(np.zeros(T), sol, P, np.ones((T, 2)), Grouping.single(2))
    np.testing.assert_array_equal(reg, np.zeros(T))


@pytest.fixture(scope="module")
def short_run():
    market = synthetic_market(120, 4, seed=9, low=0.95, high=1.05)
    sectors = Grouping.from_sets([[0, 1], [2, 3]], n=4)
    params = default_params(market.relatives, 4, 0.1)
    return market, sectors, run_erep(market, BASES, sectors, params)


def test_regret_nonnegative_at_end(short_run):
    _, _, rep = short_run
    sol, regret = report_regret(rep)
    assert regret.shape == (rep.T,)
    assert regret[-1] >= -1e-8
    # online regularized loss equals the sum of g_t plus the exposure penalty
    lam = rep.extras["params"].lam
    direct = -np.log(rep.factors) + lam * np.array([group_norm(w, rep.extras["grouping"]) for w in rep.allocations])
    np.testing.assert_allclose(rep.reg_losses, direct, atol=1e-12)


def test_curvature_sum_replay(short_run):
    _, _, rep = short_run
    replay = replay_curvature_terms(rep.extras["gradients"], rep.extras["params"].epsilon)
    np.testing.assert_allclose(replay, rep.curvature_term, rtol=1e-10, atol=1e-14)
    report = lemma2_report(rep)
    assert report.bound == pytest.approx(4 * math.log(rep.T))
    assert report.satisfied


def test_zero_gradients_give_zero_curvature_sum():
    assert np.all(replay_curvature_terms(np.zeros((7, 3)), 0.5) == 0.0)


# ---------------------------------------------------------------- walk-forward


def test_walk_forward_singleton_grid_reproduces_run(short_run):
    market, sectors, rep = short_run
    runs = {0.1: rep}
    lambdas, wf = walk_forward_lambda(market, BASES, sectors, [0.1], window=20, runs=runs)
    assert np.all(lambdas == 0.1)
    assert np.array_equal(wf.portfolios, rep.portfolios)
    assert np.array_equal(wf.factors, rep.factors)
    assert wf.name == "EREP(lambda_WF)"


def test_walk_forward_picks_dominating_lambda(short_run):
    _, _, rep = short_run

    class Fake:
        def __init__(self, factors):
            self.T, self.periods_per_year = factors.size, 252
            self.factors = factors
            self.daily_returns = factors - 1
            self.portfolios = np.tile(factors[:, None], (1, 2))
            for attr in ("reg_losses", "allocations", "curvature_term", "exposure", "converged"):
                setattr(self, attr, None)
            self.names, self.dates, self.allocation_labels, self.log_returns = ("a", "b"), None, None, False

    rng = np.random.default_rng(3)
    base = rng.normal(0, 0.01, 100)
    runs = {0.0: Fake(1 + base), 0.5: Fake(1 + base + 0.003), 1.0: Fake(1 + base - 0.003)}
    result = walk_forward_from_runs(runs, window=20)
    assert np.all(result.lambdas[:20] == 0.5)  # lower median during warm-up
    assert np.all(result.lambdas[20:] == 0.5)
    assert result.every == 5
    assert [t for t, _ in result.recalibrations] == list(range(20, 100, 5))


def test_walk_forward_window_longer_than_horizon(short_run):
    _, _, rep = short_run
    result = walk_forward_from_runs({0.1: rep}, window=500)
    assert result.truncated and result.report.meta["window_truncated"]
    assert np.array_equal(result.report.factors, rep.factors)


def test_walk_forward_rejects_bad_arguments(short_run):
    _, _, rep = short_run
    with pytest.raises(ParameterError):
        walk_forward_from_runs({}, 20)
    with pytest.raises(ParameterError):
        walk_forward_from_runs({0.1: rep}, 1)
    with pytest.raises(ParameterError):
        walk_forward_lambda(None, BASES, None, [])


def test_window_sensitivity_and_candidates(short_run):
    market, sectors, rep = short_run
    runs = candidate_runs(market, BASES, sectors, [0.0, 0.1], params=rep.extras["params"])
    assert np.array_equal(runs[0.1].allocations, rep.allocations)
    trace = window_sensitivity(runs, [10, 20, 40])
    assert [w for w, _ in trace] == [10, 20, 40]
    assert all(math.isfinite(s) for _, s in trace)


def test_flat_market_ensemble_zero_regret():
    market = MarketSeries(("a", "b"), np.ones((20, 2)))
    rep = run_erep(market, BASES, Grouping.single(2), default_params(market.relatives, 2, 0.0))
    sol, regret = report_regret(rep)
    assert rep.total_return == 1.0
    np.testing.assert_allclose(regret, 0.0, atol=1e-12)
