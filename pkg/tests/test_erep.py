import math

import numpy as np
import pytest

from conftest import assert_simplex, pair_sectors, synthetic_market
from erep.ensemble import (
    aggregate_portfolio,
    build_grid,
    collect_portfolios,
    default_params,
    ensemble_grouping,
    erep_step,
    grad_g,
    gradient_bound,
    initial_state,
    loss_g,
    run_erep,
)
from erep.errors import GroupingError, NumericError
from erep.evaluation import exp_concavity_slack, lemma2_report, wealth_matrix
from erep.market_data import Grouping, MarketSeries
from erep.optimizer import CompositeStepParams, batched_composite_objective, brute_force_simplex_min, composite_objective
from erep.strategies import MIXED, StrategySpec, run_strategy
from oracles import central_difference


def _random_P(rng, n, p):
    return rng.dirichlet(np.ones(n), size=p).T


# ---------------------------------------------------------------- grid


def test_grid_sizes():
    sectors = Grouping.from_sets([[0, 1], [2, 3], [4], [5, 6, 7]], n=8)
    grid = build_grid(MIXED, sectors, 8)
    assert (grid.d, grid.k, grid.p) == (3, 4, 12)
    assert len(grid.states) == 12
    assert grid.labels()[:3] == ("EG(eta=0.05)@g1", "Anticor(w=20)@g1", "OLMAR(w=20)@g1")
    single = build_grid((StrategySpec("EG"),), Grouping.single(5), 5)
    assert single.p == 1


def test_grid_rejects_overlap_and_size_mismatch():
    with pytest.raises(GroupingError):
        build_grid(MIXED, Grouping.from_sets([[0, 1], [1, 2]], n=3), 3)
    with pytest.raises(GroupingError):
        build_grid(MIXED, Grouping.single(3), 4)
    with pytest.raises(ValueError):
        build_grid((), Grouping.single(3), 3)


def test_ensemble_grouping_blocks():
    eg = ensemble_grouping(Grouping.from_sets([[0], [1, 2], [3]], n=4), 3)
    assert eg.partition and eg.n == 9
    assert [list(g) for g in eg.groups] == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]


def test_warmup_columns_uniform_on_sector():
    sectors = Grouping.from_sets([[0, 3], [1, 2, 4]], n=5)
    grid = build_grid((StrategySpec("Anticor", window=5), StrategySpec("OLMAR", window=5)), sectors, 5)
    P = grid.matrix()
    expected_first = np.array([0.5, 0, 0, 0.5, 0])
    np.testing.assert_array_equal(P[:, 0], expected_first)
    np.testing.assert_array_equal(P[:, 1], expected_first)
    # Anticor stays in warm-up for 2w rounds
    P = collect_portfolios(grid, np.array([1.1, 0.9, 1.0, 1.2, 0.95]))
    np.testing.assert_allclose(P[:, 2], [0, 1 / 3, 1 / 3, 0, 1 / 3])


def test_single_sub_algorithm_is_the_base(rng):
    X = rng.uniform(0.9, 1.1, size=(30, 4))
    spec = StrategySpec("EG", eta=0.3)
    grid = build_grid((spec,), Grouping.single(4), 4)
    B = run_strategy(spec, X)
    for t in range(29):
        P = collect_portfolios(grid, X[t])
        assert P.shape == (4, 1)
        np.testing.assert_array_equal(P[:, 0], B[t + 1])


def test_matrix_matches_per_sector_oracle_day30():
    market = synthetic_market(30, 7, seed=11, low=0.9, high=1.1)
    sectors = Grouping.from_sets([[0, 4], [1, 2, 5], [3, 6]], n=7)
    bases = (StrategySpec("EG"), StrategySpec("Anticor", window=4), StrategySpec("OLMAR", window=5))
    grid = build_grid(bases, sectors, 7)
    for t in range(30):
        P = collect_portfolios(grid, market.relatives[t])
    for j, g in enumerate(sectors.groups):
        for i, spec in enumerate(bases):
            col = P[:, j * 3 + i]
            expected = np.zeros(7)
            expected[g] = run_strategy(spec, np.vstack([market.relatives[:, g], np.ones(len(g))]))[30]
            np.testing.assert_allclose(col, expected, rtol=0, atol=1e-12)
            assert_simplex(col)
            assert np.all(col[np.setdiff1d(np.arange(7), g)] == 0)


def test_collect_rejects_bad_rows():
    grid = build_grid((StrategySpec("EG"),), Grouping.single(2), 2)
    with pytest.raises(NumericError):
        collect_portfolios(grid, np.array([1.0, 0.0]))
    with pytest.raises(NumericError):
        collect_portfolios(grid, np.array([1.0, 1.0, 1.0]))


# ---------------------------------------------------------------- loss / gradient


def test_loss_examples(rng):
    P = _random_P(rng, 4, 6)
    w = rng.dirichlet(np.ones(6))
    assert abs(loss_g(np.ones(4), P, w)) <= 1e-15
    x = rng.uniform(0.5, 1.5, 4)
    for i in range(4):
        assert loss_g(x, np.eye(4), np.eye(4)[i]) == pytest.approx(-math.log(x[i]), abs=1e-15)
    for _ in range(20):
        P, w, x = _random_P(rng, 5, 3), rng.dirichlet(np.ones(3)), rng.uniform(0.5, 2, 5)
        direct = -math.log(sum(x[a] * sum(P[a, b] * w[b] for b in range(3)) for a in range(5)))
        assert loss_g(x, P, w) == pytest.approx(direct, abs=1e-14)


def test_gradient_examples(rng):
    P = _random_P(rng, 4, 6)
    w = rng.dirichlet(np.ones(6))
    np.testing.assert_allclose(grad_g(np.ones(4), P, w), -np.ones(6), atol=1e-15)
    x = rng.uniform(0.5, 1.5, 4)
    np.testing.assert_allclose(grad_g(3.7 * x, P, w), grad_g(x, P, w), rtol=1e-14)


def test_gradient_finite_differences(rng):
    for _ in range(100):
        n, p = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        P, x = _random_P(rng, n, p), rng.uniform(0.5, 1.5, n)
        w = rng.dirichlet(np.ones(p))
        fd = central_difference(lambda v: loss_g(x, P, v), w, h=1e-6)
        assert np.max(np.abs(fd - grad_g(x, P, w))) <= 1e-6


def test_nonpositive_wealth_is_numeric_error():
    with pytest.raises(NumericError):
        loss_g(np.array([1.0, 1.0]), np.array([[1.0], [0.0]]) * -1, np.array([1.0]))


def test_aggregate_portfolio(rng):
    P = _random_P(rng, 5, 4)
    np.testing.assert_array_equal(aggregate_portfolio(P, np.eye(4)[2]), P[:, 2])
    col = rng.dirichlet(np.ones(5))
    np.testing.assert_allclose(aggregate_portfolio(np.column_stack([col, col]), [0.5, 0.5]), col, atol=1e-15)
    w = rng.dirichlet(np.ones(4))
    b = aggregate_portfolio(P, w)
    assert abs(b.sum() - 1) <= 1e-12
    np.testing.assert_allclose(b, [sum(P[a, c] * w[c] for c in range(4)) for a in range(5)], atol=1e-15)


# ---------------------------------------------------------------- one round


def test_step_symmetric_flat_round_keeps_uniform():
    sectors = pair_sectors(4)
    bases = (StrategySpec("EG"), StrategySpec("EG"))
    grid = build_grid(bases, sectors, 4)
    eg = ensemble_grouping(sectors, 2)
    params = CompositeStepParams(eta=0.5, lam=0.3, epsilon=2.0)
    state = initial_state(4, params.epsilon)
    new = erep_step(state, np.ones(4), grid.matrix(), params, eg)
    np.testing.assert_allclose(new.allocation, state.allocation, atol=1e-9)
    assert new.t == 1 and new.log_wealth == 0.0


def test_step_updates_curvature_and_wealth(rng):
    P = _random_P(rng, 4, 4)
    x = rng.uniform(0.9, 1.1, 4)
    params = CompositeStepParams(eta=0.7, lam=0.2, epsilon=0.5)
    eg = ensemble_grouping(pair_sectors(4), 2)
    state = initial_state(4, 0.5)
    new = erep_step(state, x, P, params, eg)
    g = grad_g(x, P, state.allocation)
    np.testing.assert_allclose(new.curvature, state.curvature + np.outer(g, g), rtol=0, atol=1e-15)
    assert new.log_wealth == pytest.approx(math.log(x @ P @ state.allocation), abs=1e-15)


def test_step_matches_grid_three_dims(rng):
    for _ in range(10):
        P = _random_P(rng, 5, 3)
        x = rng.uniform(0.8, 1.2, 5)
        eg = Grouping.from_sets([[0], [1, 2]], n=3)
        params = CompositeStepParams(eta=rng.uniform(0.1, 2), lam=float(rng.choice([0, 0.1, 1.0])), epsilon=rng.uniform(0.1, 2))
        state = initial_state(3, params.epsilon)
        state = erep_step(state, rng.uniform(0.8, 1.2, 5), _random_P(rng, 5, 3), params, eg)
        new = erep_step(state, x, P, params, eg)
        g = grad_g(x, P, state.allocation)
        f = batched_composite_objective(g, new.curvature, state.allocation, params.eta, params.lam, eg)
        _, best = brute_force_simplex_min(f, 3, 1e-3)
        assert composite_objective(new.allocation, g, new.curvature, state.allocation, params.eta, params.lam, eg) <= best + 1e-6


# ---------------------------------------------------------------- full runs


@pytest.fixture(scope="module")
def engine_run():
    market = synthetic_market(150, 6, seed=5, low=0.95, high=1.05)
    sectors = Grouping.from_sets([[0, 1], [2, 3, 4], [5]], n=6)
    bases = (StrategySpec("EG"), StrategySpec("Anticor", window=3), StrategySpec("OLMAR", window=4))
    params = default_params(market.relatives, 9, 0.1)
    return market, run_erep(market, bases, sectors, params)


def test_run_invariants(engine_run):
    market, rep = engine_run
    eps = rep.extras["params"].epsilon
    for t in range(rep.T):
        assert_simplex(rep.allocations[t])
        assert_simplex(rep.portfolios[t])
        assert_simplex(rep.extras["matrices"][t].sum(axis=1) / rep.extras["matrices"][t].shape[1])
    A = rep.extras["final_state"].curvature
    assert np.allclose(A, A.T, atol=1e-12)
    assert np.linalg.eigvalsh(A)[0] >= eps - 1e-9
    assert rep.converged.all()


def test_columns_are_stochastic_and_sector_supported(engine_run):
    _, rep = engine_run
    sectors = Grouping.from_sets([[0, 1], [2, 3, 4], [5]], n=6)
    for P in rep.extras["matrices"][::10]:
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-9)
        for j, g in enumerate(sectors.groups):
            off = np.setdiff1d(np.arange(6), g)
            assert np.all(P[off, 3 * j:3 * j + 3] == 0)


def test_wealth_identity(engine_run):
    market, rep = engine_run
    direct = np.prod([market.relatives[t] @ rep.extras["matrices"][t] @ rep.allocations[t] for t in range(rep.T)])
    assert math.exp(rep.extras["final_state"].log_wealth) == pytest.approx(direct, rel=1e-10)
    assert rep.wealth[-1] == pytest.approx(direct, rel=1e-10)


def test_exp_concavity_inequality(engine_run):
    market, rep = engine_run
    R = wealth_matrix(rep.extras["matrices"], market.relatives)
    assert exp_concavity_slack(R, rep.extras["params"].eta, 1000, rng=1).min() >= -1e-10


def test_curvature_sum_bound(engine_run):
    _, rep = engine_run
    report = lemma2_report(rep)
    assert report.satisfied and report.statistic <= 9 * math.log(rep.T)


def test_runs_deterministic(engine_run):
    market, rep = engine_run
    bases = (StrategySpec("EG"), StrategySpec("Anticor", window=3), StrategySpec("OLMAR", window=4))
    again = run_erep(market, bases, Grouping.from_sets([[0, 1], [2, 3, 4], [5]], n=6), rep.extras["params"])
    assert np.array_equal(again.allocations, rep.allocations)
    assert np.array_equal(again.factors, rep.factors)


def test_first_round_plays_uniform_sector_columns():
    market = MarketSeries(("a", "b", "c"), np.array([[1.2, 0.8, 1.0], [1.0, 1.0, 1.0]]))
    rep = run_erep(market, (StrategySpec("EG"),), Grouping.from_sets([[0], [1, 2]], n=3), CompositeStepParams(eta=1.0))
    np.testing.assert_allclose(rep.portfolios[0], [0.5, 0.25, 0.25])


def test_gradient_bound_dominates_realized(engine_run):
    market, rep = engine_run
    G = gradient_bound(market.relatives, 9)
    assert np.linalg.norm(rep.extras["gradients"], axis=1).max() <= G
