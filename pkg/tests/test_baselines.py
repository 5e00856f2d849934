import math

import numpy as np
import pytest

from conftest import assert_simplex, synthetic_market
from erep.baselines import (
    OrsadParams,
    backtest_strategy,
    default_orsad_params,
    maons_params,
    maons_run,
    orsad_objective,
    orsad_run,
    orsad_step,
)
from erep.ensemble import run_erep
from erep.errors import ParameterError
from erep.market_data import Grouping
from erep.optimizer import CompositeStepParams, group_norm
from erep.strategies import StrategySpec, run_strategy
from oracles import group_norm_direct, simplex_points

BASES = (StrategySpec("EG"), StrategySpec("Anticor", window=3), StrategySpec("OLMAR", window=4))


def test_backtest_strategy_matches_run_strategy(small_market):
    spec = StrategySpec("OLMAR", window=5)
    rep = backtest_strategy(spec, small_market)
    B = run_strategy(spec, small_market.relatives)
    np.testing.assert_array_equal(rep.portfolios, B)
    assert rep.total_return == pytest.approx(np.prod(np.sum(B * small_market.relatives, axis=1)), rel=1e-12)
    assert rep.name == spec.label


def test_maons_equals_single_sector_unregularized_ensemble(small_market):
    params = maons_params(small_market, 3)
    a = maons_run(BASES, small_market, params)
    b = run_erep(small_market, BASES, Grouping.single(small_market.n), params)
    assert np.array_equal(a.allocations, b.allocations)
    assert np.array_equal(a.factors, b.factors)
    # a nonzero lambda passed in is dropped
    c = maons_run(BASES, small_market, CompositeStepParams(params.eta, 0.7, params.epsilon))
    assert np.array_equal(a.allocations, c.allocations)


def test_maons_single_base_is_the_base(small_market):
    spec = StrategySpec("EG", eta=0.05)
    rep = maons_run((spec,), small_market, maons_params(small_market, 1))
    assert np.all(rep.allocations == 1.0)
    np.testing.assert_allclose(rep.portfolios, run_strategy(spec, small_market.relatives), atol=1e-15)


def test_orsad_examples():
    g = Grouping.from_sets([[0, 1], [2]], n=3)
    prev = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(orsad_step(prev, np.array([1.1, 0.9, 1.0]), OrsadParams(0.0, 1.0), g), prev, atol=1e-15)
    singles = Grouping.from_sets([[0], [1]], n=2)
    out = orsad_step(np.array([0.9, 0.1]), np.array([1.5, 0.5]), OrsadParams(1.0, 0.5), singles)
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-9)


def test_orsad_params_validation():
    with pytest.raises(ParameterError):
        OrsadParams(-0.1, 0.5)
    with pytest.raises(ParameterError):
        OrsadParams(0.1, 0.0)
    with pytest.raises(ParameterError):
        orsad_step(np.full(4, 0.25), np.ones(4), OrsadParams(0.1, 0.2), Grouping.from_sets([[0, 1], [2, 3]], n=4))


def test_orsad_step_matches_feasible_grid(rng):
    step = 1 / 300
    W = simplex_points(3, step)
    for _ in range(15):
        groups = [[0, 1], [2]] if rng.random() < 0.5 else [[0, 1], [1, 2]]
        grouping = Grouping.from_sets(groups, n=3)
        K = float(rng.uniform(0.55, 0.95))
        eta = float(rng.uniform(0.05, 2.0))
        prev = rng.dirichlet(np.ones(3))
        x = rng.uniform(0.7, 1.3, 3)
        out = orsad_step(prev, x, OrsadParams(eta, K), grouping)
        assert_simplex(out)
        assert group_norm_direct(out, groups) <= K + 1e-9
        feasible = W[[group_norm_direct(w, groups) <= K + 1e-12 for w in W]]
        vals = -eta * np.log(feasible @ x) + 0.5 * np.sum((feasible - prev) ** 2, axis=1)
        # grid resolution: the objective is Lipschitz with constant < eta*max x/min x + 2 on the simplex
        lip = eta * x.max() / x.min() + 2
        assert orsad_objective(out, prev, x, eta) <= vals.min() + 1e-9
        assert orsad_objective(out, prev, x, eta) >= vals.min() - lip * step * 2


def test_orsad_run_feasible_and_consistent(small_market, small_sectors):
    params = OrsadParams(0.5, 0.6)
    rep = orsad_run(small_market, small_sectors, params)
    for b in rep.portfolios:
        assert_simplex(b)
        assert group_norm(b, small_sectors) <= 0.6 + 1e-9
    np.testing.assert_allclose(rep.exposure, [group_norm(b, small_sectors) for b in rep.portfolios])
    assert rep.total_return == pytest.approx(np.prod(np.sum(rep.portfolios * small_market.relatives, axis=1)))


def test_orsad_infeasible_cap_raises(small_market, small_sectors):
    with pytest.raises(ParameterError):
        orsad_run(small_market, small_sectors, OrsadParams(0.5, 0.3))


def test_orsad_default_params(small_market, small_sectors):
    params = default_orsad_params(small_market, small_sectors)
    assert params.K == pytest.approx(0.5 * (1 / 3 + 1))
    assert 0 < params.eta < 1


def test_orsad_overlapping_groups_run():
    market = synthetic_market(25, 4, seed=2)
    groups = Grouping.from_sets([[0, 1, 2], [2, 3], [0, 3]], n=4)
    rep = orsad_run(market, groups, OrsadParams(0.3, 0.7))
    assert max(group_norm(b, groups) for b in rep.portfolios) <= 0.7 + 1e-8
    assert math.isfinite(rep.total_return)

