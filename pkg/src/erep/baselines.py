"""Comparison algorithms: plain base strategies, MAons and ORSAD."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ensemble import default_params, gradient_bound, run_erep
from .errors import ConvergenceWarning, ParameterError
from .market_data import Grouping, MarketSeries
from .optimizer import CompositeStepParams, capped_simplex_projection, group_norm, min_group_cap, theory_eta
from .report import BacktestReport
from .strategies import StrategySpec, run_strategy


def backtest_strategy(spec: StrategySpec, market: MarketSeries, periods_per_year=252, log_returns=False) -> BacktestReport:
    portfolios = run_strategy(spec, market.relatives)
    factors = np.einsum("ij,ij->i", portfolios, market.relatives)
    return BacktestReport(
        name=spec.label,
        names=market.names,
        dates=tuple(market.date_label(t) for t in range(market.T)),
        portfolios=portfolios,
        factors=factors,
        periods_per_year=periods_per_year,
        log_returns=log_returns,
        meta={"strategy": spec.to_dict()},
    )


def maons_run(bases: Sequence[StrategySpec], market: MarketSeries, params: CompositeStepParams, **kw) -> BacktestReport:
    """Unregularized Newton ensemble over whole-market base strategies.

    Runs the ensemble engine with one all-stocks sector and ``lam = 0``.
    """
    if params.lam != 0:
        params = CompositeStepParams(params.eta, 0.0, params.epsilon, params.inner_tol, params.inner_max_iter)
    return run_erep(market, bases, Grouping.single(market.n), params, name="MAons", **kw)


def maons_params(market: MarketSeries, d: int, **kw) -> CompositeStepParams:
    return default_params(market.relatives, d, 0.0, **kw)


@dataclass(frozen=True)
class OrsadParams:
    eta: float
    K: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise ParameterError(f"ORSAD eta must be >= 0, got {self.eta}")
        if not self.K > 0:
            raise ParameterError(f"ORSAD cap K must be > 0, got {self.K}")

    def check_feasible(self, grouping: Grouping):
        floor = min_group_cap(grouping)
        if self.K < floor - 1e-12:
            raise ParameterError(f"K={self.K} < {floor:g}: no simplex point satisfies the cap")


def default_orsad_params(market: MarketSeries, grouping: Grouping, alpha: float = 1.0) -> OrsadParams:
    """Step weight from the theory rate over stocks; cap at the middle of ``[1/m, 1]``."""
    eta, _ = theory_eta(alpha, gradient_bound(market.relatives, market.n), math.sqrt(2.0))
    return OrsadParams(eta=eta, K=0.5 * (1.0 / grouping.m + 1.0))


def orsad_objective(b, b_prev, x, eta) -> float:
    d = b - b_prev
    return -eta * math.log(float(np.dot(b, x))) + 0.5 * float(d @ d)


def orsad_step(b_prev, x, params: OrsadParams, grouping: Grouping, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """``argmin -eta log<b, x> + 0.5 ||b - b_prev||^2`` over the simplex with group masses <= K.

    Accelerated projected gradient; the objective is 1-strongly convex and
    the projection onto the feasible polytope is exact for partitions.
    """
    params.check_feasible(grouping)
    b_prev = np.asarray(b_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    eta = params.eta

    def project(v):
        return capped_simplex_projection(v, grouping, params.K)

    if eta == 0:
        return project(b_prev)

    L = 1.0 + eta * float(x @ x) / float(x.min()) ** 2
    step = 1.0 / L
    beta = (math.sqrt(L) - 1) / (math.sqrt(L) + 1)

    def gradient(b):
        return -eta * x / float(b @ x) + (b - b_prev)

    cur = project(b_prev)
    y = cur.copy()
    f_cur = orsad_objective(cur, b_prev, x, eta)
    for _ in range(max_iter):
        if float(y @ x) <= 0:
            y = cur.copy()
        nxt = project(y - step * gradient(y))
        gmap = L * (y - nxt)
        f_nxt = orsad_objective(nxt, b_prev, x, eta)
        if float(gmap @ gmap) <= tol:
            return nxt
        if f_nxt > f_cur:
            y = cur.copy()
            continue
        y = nxt + beta * (nxt - cur)
        cur, f_cur = nxt, f_nxt
    warnings.warn("ORSAD step hit iteration cap", ConvergenceWarning, stacklevel=2)
    return cur


def orsad_run(market: MarketSeries, grouping: Grouping, params: Optional[OrsadParams] = None,
              periods_per_year=252, log_returns=False) -> BacktestReport:
    """Composite mirror descent over stocks under a group-exposure cap."""
    if params is None:
        params = default_orsad_params(market, grouping)
    params.check_feasible(grouping)
    T, n = market.T, market.n
    b = capped_simplex_projection(np.full(n, 1.0 / n), grouping, params.K)
    portfolios = np.empty((T, n))
    exposure = np.empty(T)
    for t in range(T):
        portfolios[t] = b
        exposure[t] = group_norm(b, grouping)
        b = orsad_step(b, market.relatives[t], params, grouping)
    factors = np.einsum("ij,ij->i", portfolios, market.relatives)
    return BacktestReport(
        name="ORSAD",
        names=market.names,
        dates=tuple(market.date_label(t) for t in range(T)),
        portfolios=portfolios,
        factors=factors,
        exposure=exposure,
        periods_per_year=periods_per_year,
        log_returns=log_returns,
        meta={"eta": params.eta, "K": params.K},
    )
