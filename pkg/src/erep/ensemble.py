"""Exposure-regularized ensemble over sector-restricted sub-algorithms.

Each of the d base strategies is instantiated once per sector (k sectors)
and only sees that sector's stocks, giving p = k * d sub-algorithms. Their
portfolios form the columns of an n x p matrix ``P``; the ensemble plays
``b = P w`` for an allocation ``w`` on the p-simplex and updates ``w`` with
a composite Newton step regularized by the sector-exposure group norm.

Columns are ordered sector-major: column ``j * d + i`` is base ``i`` on
sector ``j``, so each sector's sub-algorithms are contiguous.
"""

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConvergenceWarning, GroupingError, NumericError
from .market_data import Grouping, MarketSeries
from .optimizer import (
    CompositeStepParams,
    group_norm,
    solve_composite_step,
    theory_eta,
    update_curvature,
)
from .report import BacktestReport
from .strategies import Strategy, StrategySpec, strategy_init

SIMPLEX_DIAMETER = math.sqrt(2.0)


@dataclass
class SubAlgorithmGrid:
    bases: tuple
    sectors: Grouping
    states: list

    @property
    def d(self) -> int:
        return len(self.bases)

    @property
    def k(self) -> int:
        return self.sectors.m

    @property
    def p(self) -> int:
        return self.k * self.d

    @property
    def n(self) -> int:
        return self.sectors.n

    def labels(self) -> tuple:
        return tuple(f"{b.label}@{s}" for s in self.sectors.labels for b in self.bases)

    def matrix(self) -> np.ndarray:
        """Current portfolios embedded into n dimensions, one column per sub-algorithm."""
        P = np.zeros((self.n, self.p))
        for j, g in enumerate(self.sectors.groups):
            for i in range(self.d):
                P[g, j * self.d + i] = self.states[j * self.d + i].portfolio
        return P


def build_grid(bases: Sequence[StrategySpec], sectors: Grouping, n: int) -> SubAlgorithmGrid:
    bases = tuple(bases)
    if not bases:
        raise ValueError("need at least one base strategy")
    if sectors.n != n:
        raise GroupingError(f"sector grouping covers {sectors.n} stocks, market has {n}")
    if not sectors.partition:
        raise GroupingError("sectors must partition the stocks (disjoint and covering)")
    states = [strategy_init(spec, len(g)) for g in sectors.groups for spec in bases]
    return SubAlgorithmGrid(bases, sectors, states)


def collect_portfolios(grid: SubAlgorithmGrid, x) -> np.ndarray:
    """Feed each sub-algorithm its sector slice of ``x``; return the next matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,) or not np.all(x > 0):
        raise NumericError("market row must be strictly positive with one entry per stock")
    for j, g in enumerate(grid.sectors.groups):
        xs = x[g]
        for i in range(grid.d):
            state: Strategy = grid.states[j * grid.d + i]
            try:
                state.update(xs)
            except Exception as exc:
                raise type(exc)(f"sub-algorithm ({grid.bases[i].label}, {grid.sectors.labels[j]}): {exc}") from exc
    return grid.matrix()


def ensemble_grouping(sectors: Grouping, d: int) -> Grouping:
    """Group j holds the allocation coordinates of every base on sector j."""
    k = sectors.m
    return Grouping(sectors.labels, tuple(range(j * d, (j + 1) * d) for j in range(k)), k * d)


@dataclass(frozen=True)
class EnsembleState:
    allocation: np.ndarray
    curvature: np.ndarray
    t: int = 0
    log_wealth: float = 0.0


def initial_state(p: int, epsilon: float) -> EnsembleState:
    return EnsembleState(np.full(p, 1.0 / p), epsilon * np.eye(p), 0, 0.0)


def _wealth_factor(x, P, w):
    value = float(np.dot(x, P @ w))
    if not value > 0:
        raise NumericError(f"nonpositive wealth factor {value}")
    return value


def loss_g(x, P, w) -> float:
    """``-log <x, P w>``."""
    return -math.log(_wealth_factor(np.asarray(x, dtype=float), P, w))


def grad_g(x, P, w) -> np.ndarray:
    """``-P^T x / <x, P w>``."""
    x = np.asarray(x, dtype=float)
    return -(P.T @ x) / _wealth_factor(x, P, w)


def aggregate_portfolio(P, w) -> np.ndarray:
    return P @ np.asarray(w, dtype=float)


class RoundInfo(NamedTuple):
    factor: float
    loss: float
    reg_loss: float
    grad: np.ndarray
    curvature_term: float
    converged: bool


def erep_round(state: EnsembleState, x, P, params: CompositeStepParams, grouping: Grouping, method="accelerated"):
    """Play ``state.allocation`` against ``x`` with matrix ``P`` and compute the next state."""
    x = np.asarray(x, dtype=float)
    factor = _wealth_factor(x, P, state.allocation)
    loss = -math.log(factor)
    grad = -(P.T @ x) / factor
    reg_loss = loss + params.lam * group_norm(state.allocation, grouping) if params.lam else loss
    A = update_curvature(state.curvature, grad)
    curvature_term = float(grad @ np.linalg.solve(A, grad))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        result = solve_composite_step(grad, A, state.allocation, params, grouping, method=method)
    for w in caught:
        warnings.warn(f"round {state.t + 1}: {w.message}", ConvergenceWarning, stacklevel=2)
    new = EnsembleState(result.w, A, state.t + 1, state.log_wealth + math.log(factor))
    return new, RoundInfo(factor, loss, reg_loss, grad, curvature_term, result.converged)


def erep_step(state: EnsembleState, x, P, params: CompositeStepParams, grouping: Grouping, method="accelerated"):
    """One round: accumulate log wealth, curvature, and the composite Newton update."""
    return erep_round(state, x, P, params, grouping, method)[0]


def gradient_bound(relatives, p: int) -> float:
    """Bound on ``||grad g_t||`` valid for any column-stochastic P and simplex w.

    ``||P^T x|| <= sqrt(p) max(x)`` and ``<x, P w> >= min(x)``.
    """
    rel = np.asarray(relatives, dtype=float)
    ratio = float(np.max(rel.max(axis=1) / rel.min(axis=1)))
    return math.sqrt(p) * ratio


def default_params(relatives, p: int, lam: float = 0.0, alpha: float = 1.0, eta=None, epsilon=None, **kw) -> CompositeStepParams:
    """Step parameters from the exp-concavity constants of the data.

    ``eta`` and ``epsilon`` default to the theory values for the simplex
    diameter and a gradient bound estimated from the relatives.
    """
    th_eta, th_eps = theory_eta(alpha, gradient_bound(relatives, p), SIMPLEX_DIAMETER)
    return CompositeStepParams(
        eta=th_eta if eta is None else eta,
        lam=lam,
        epsilon=th_eps if epsilon is None else epsilon,
        **kw,
    )


def run_erep(
    market: MarketSeries,
    bases: Sequence[StrategySpec],
    sectors: Grouping,
    params: CompositeStepParams,
    name: Optional[str] = None,
    method: str = "accelerated",
    keep_matrices: bool = True,
    periods_per_year: int = 252,
    log_returns: bool = False,
) -> BacktestReport:
    """Backtest the ensemble over ``market``.

    Round t is traded with the matrix collected after round t - 1 (uniform
    columns on the first round).
    """
    grid = build_grid(bases, sectors, market.n)
    eg = ensemble_grouping(sectors, grid.d)
    T, p = market.T, grid.p
    state = initial_state(p, params.epsilon)
    P = grid.matrix()

    portfolios = np.empty((T, market.n))
    allocations = np.empty((T, p))
    factors = np.empty(T)
    reg_losses = np.empty(T)
    curvature_term = np.empty(T)
    exposure = np.empty(T)
    converged = np.empty(T, dtype=bool)
    gradients = np.empty((T, p))
    matrices = np.empty((T, market.n, p)) if keep_matrices else None

    for t in range(T):
        x = market.relatives[t]
        allocations[t] = state.allocation
        portfolios[t] = aggregate_portfolio(P, state.allocation)
        exposure[t] = group_norm(state.allocation, eg)
        if keep_matrices:
            matrices[t] = P
        state, info = erep_round(state, x, P, params, eg, method)
        factors[t] = info.factor
        reg_losses[t] = info.reg_loss
        curvature_term[t] = info.curvature_term
        converged[t] = info.converged
        gradients[t] = info.grad
        P = collect_portfolios(grid, x)

    meta = {"lambda": params.lam, "eta": params.eta, "epsilon": params.epsilon, "k": grid.k, "d": grid.d}
    return BacktestReport(
        name=name or f"EREP(lambda={params.lam:g})",
        names=market.names,
        dates=tuple(market.date_label(t) for t in range(T)),
        portfolios=portfolios,
        factors=factors,
        reg_losses=reg_losses,
        allocations=allocations,
        allocation_labels=grid.labels(),
        curvature_term=curvature_term,
        exposure=exposure,
        converged=converged,
        periods_per_year=periods_per_year,
        log_returns=log_returns,
        meta=meta,
        extras={
            "final_state": state,
            "gradients": gradients,
            "matrices": matrices,
            "grouping": eg,
            "params": params,
            "relatives": market.relatives,
        },
    )
