"""Performance metrics, hindsight comparator, regret and walk-forward calibration."""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from .ensemble import default_params, ensemble_grouping, run_erep
from .errors import ConvergenceWarning, DataError, ErepError, ParameterError
from .market_data import Grouping, MarketSeries
from .optimizer import CompositeStepParams, group_norm, prox_group_simplex
from .report import PERIODS_PER_YEAR, BacktestReport

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)


class SharpeUndefined(ErepError, ValueError):
    pass


def _relatives(market):
    return market.relatives if isinstance(market, MarketSeries) else np.asarray(market, dtype=float)


def cumulative_wealth(portfolios, market) -> float:
    """Product over rounds of ``<b_t, x_t>`` from an initial wealth of 1."""
    X = _relatives(market)
    B = np.asarray(portfolios, dtype=float)
    if B.shape != X.shape:
        raise ValueError(f"{B.shape[0]} portfolios for {X.shape[0]} market rounds")
    factors = np.einsum("ij,ij->i", B, X)
    if np.any(factors <= 0):
        raise DataError(f"nonpositive daily wealth factor at round {int(np.argmax(factors <= 0)) + 1}")
    return float(np.prod(factors))


def sharpe_ratio(daily_returns, periods_per_year: int = PERIODS_PER_YEAR) -> float:
    """Annualized ``mean / sample std`` of daily returns (zero risk-free rate)."""
    r = np.asarray(daily_returns, dtype=float)
    if r.size < 2:
        raise SharpeUndefined(f"need at least 2 returns, got {r.size}")
    sd = r.std(ddof=1)
    # a constant series can leave a roundoff-level std behind
    if not sd > 0 or r.max() == r.min():
        raise SharpeUndefined("zero return variance")
    return float(r.mean() / sd * math.sqrt(periods_per_year))


# -- hindsight comparator -----------------------------------------------------


@dataclass
class HindsightSolution:
    w_star: np.ndarray
    objective: float
    certificate: float
    converged: bool
    flat: bool = False
    iterations: int = 0
    lam: float = 0.0

    def round_losses(self, R, grouping) -> np.ndarray:
        """Per-round regularized loss ``g_t(w*) + lam L(w*)``."""
        losses = -np.log(R @ self.w_star)
        if self.lam:
            losses = losses + self.lam * group_norm(self.w_star, grouping)
        return losses


def wealth_matrix(P_seq, market) -> np.ndarray:
    """``R[t] = P_t^T x_t`` so that ``g_t(w) = -log(R[t] @ w)``."""
    return np.einsum("tnp,tn->tp", np.asarray(P_seq, dtype=float), _relatives(market))


def _linear_min(c, lam, grouping):
    """``min_{u in simplex} <c, u> + lam L(u)``."""
    if not lam:
        return float(c.min())
    if grouping.partition:
        cmin = np.sort([c[g].min() for g in grouping.groups])
        q = np.arange(1, cmin.size + 1)
        return float(np.min((np.cumsum(cmin) + lam) / q))
    # epigraph LP over (u, s)
    p, m = c.size, grouping.m
    res = linprog(
        np.append(c, lam),
        A_ub=np.hstack([grouping.indicator(), -np.ones((m, 1))]),
        b_ub=np.zeros(m),
        A_eq=np.append(np.ones(p), 0.0)[None, :],
        b_eq=[1.0],
        bounds=[(0, None)] * p + [(None, None)],
        method="highs",
    )
    return float(res.fun)


def best_fixed_allocation(
    P_seq,
    market,
    lam: float,
    grouping: Grouping,
    tol: float = 1e-9,
    patience: int = 200,
    max_iter: int = 1_000_000,
) -> HindsightSolution:
    """Best fixed allocation in hindsight for ``sum_t [g_t(w) + lam L(w)]``.

    Accelerated proximal gradient with backtracking and restarts. Stops when
    the Frank-Wolfe gap (an upper bound on suboptimality) drops below
    ``tol``, when the best objective improves by less than ``tol`` over
    ``patience`` iterations, or at ``max_iter``.
    """
    R = wealth_matrix(P_seq, market)
    T, p = R.shape
    weight = T * lam

    def smooth(w):
        v = R @ w
        return float(-np.sum(np.log(v))), -(R.T @ (1.0 / v))

    def total(w, f):
        return f + weight * group_norm(w, grouping) if weight else f

    w = np.full(p, 1.0 / p)
    flat = bool(np.max(R.max(axis=1) - R.min(axis=1)) <= 1e-15 * np.max(R))
    if flat and not weight:
        f, _ = smooth(w)
        return HindsightSolution(w, f, 0.0, True, flat=True, iterations=0, lam=lam)

    f_w, g_w = smooth(w)
    obj = total(w, f_w)
    best_w, best_obj = w.copy(), obj
    ref_obj, since = best_obj, 0
    y, t_mom = w.copy(), 1.0
    L = 1.0
    gap = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        f_y, g_y = smooth(y)
        while True:
            z = prox_group_simplex(y - g_y / L, weight / L, grouping)
            f_z, _ = smooth(z)
            d = z - y
            if f_z <= f_y + g_y @ d + 0.5 * L * (d @ d) + 1e-14 * abs(f_y):
                break
            L *= 2.0
        obj_z = total(z, f_z)
        if obj_z > obj:
            # restart momentum from the last accepted point
            y, t_mom = w.copy(), 1.0
        else:
            t_next = 0.5 * (1 + math.sqrt(1 + 4 * t_mom * t_mom))
            y = z + ((t_mom - 1) / t_next) * (z - w)
            t_mom = t_next
            w, obj = z, obj_z
        L *= 0.95
        if obj < best_obj:
            best_w, best_obj = w.copy(), obj
        if ref_obj - best_obj >= tol:
            ref_obj, since = best_obj, 0
        else:
            since += 1
        if it % 10 == 0 or since >= patience:
            _, g_best = smooth(best_w)
            reg = weight * group_norm(best_w, grouping) if weight else 0.0
            gap = float(g_best @ best_w + reg - _linear_min(g_best, weight, grouping))
            if gap <= tol:
                converged = True
                break
            if since >= patience:
                converged = gap <= 1e-6
                break
    if not converged:
        warnings.warn(f"hindsight solver stopped with gap {gap:.3g}", ConvergenceWarning, stacklevel=2)
    return HindsightSolution(best_w, best_obj, gap, converged, flat=flat, iterations=it, lam=lam)


def regret_curve(online_losses, hindsight: HindsightSolution, P_seq, market, grouping) -> np.ndarray:
    """Cumulative ``online regularized loss - hindsight regularized loss`` per round."""
    R = wealth_matrix(P_seq, market)
    return np.cumsum(np.asarray(online_losses, dtype=float) - hindsight.round_losses(R, grouping))


def report_regret(report: BacktestReport, **kw):
    """Hindsight solution and regret curve for an ensemble backtest."""
    P_seq = report.extras.get("matrices")
    if P_seq is None:
        raise ValueError("report was produced without keep_matrices")
    grouping = report.extras["grouping"]
    lam = report.extras["params"].lam
    X = report.extras["relatives"]
    sol = best_fixed_allocation(P_seq, X, lam, grouping, **kw)
    return sol, regret_curve(report.reg_losses, sol, P_seq, X, grouping)


# -- Regret-bound diagnostics --------------------------------------------------


class CurvatureSumReport(NamedTuple):
    statistic: float
    bound: float
    satisfied: bool


def lemma2_report(report: BacktestReport) -> CurvatureSumReport:
    """``sum_t ||grad_t||^2_{A_t^{-1}}`` against ``p log T``."""
    stat = float(np.sum(report.curvature_term))
    p = report.allocations.shape[1]
    bound = p * math.log(report.T)
    return CurvatureSumReport(stat, bound, bool(stat <= bound))


def replay_curvature_terms(gradients, epsilon: float) -> np.ndarray:
    """Per-round ``g_t^T A_t^{-1} g_t`` rebuilt from the gradient log."""
    G = np.asarray(gradients, dtype=float)
    A = epsilon * np.eye(G.shape[1])
    out = np.empty(G.shape[0])
    for t, g in enumerate(G):
        A = A + np.outer(g, g)
        out[t] = g @ cho_solve(cho_factor(A), g)
    return out


def exp_concavity_slack(R, eta: float, n_pairs: int = 1000, rng=None) -> np.ndarray:
    """Slack of the exp-concavity lower bound on random simplex pairs.

    For each pair a random round ``t`` is drawn and
    ``f(y) - f(x) - <grad f(x), y - x> - eta/2 <grad f(x), y - x>^2`` is
    returned for ``f(w) = -log(R[t] @ w)``; nonnegative when the bound holds.
    """
    rng = np.random.default_rng(rng)
    R = np.asarray(R, dtype=float)
    T, p = R.shape
    rows = R[rng.integers(0, T, size=n_pairs)]
    X = rng.dirichlet(np.ones(p), size=n_pairs)
    Y = rng.dirichlet(np.ones(p), size=n_pairs)
    fx = -np.log(np.einsum("ij,ij->i", rows, X))
    fy = -np.log(np.einsum("ij,ij->i", rows, Y))
    gx = -rows / np.einsum("ij,ij->i", rows, X)[:, None]
    lin = np.einsum("ij,ij->i", gx, Y - X)
    return fy - fx - lin - 0.5 * eta * lin**2


# -- walk-forward lambda calibration -----------------------------------------


@dataclass
class WalkForwardResult:
    lambdas: np.ndarray
    report: BacktestReport
    recalibrations: list = field(default_factory=list)
    window: int = 0
    every: int = 1
    truncated: bool = False


def _trailing_sharpe(returns, start, stop, periods_per_year):
    try:
        return sharpe_ratio(returns[start:stop], periods_per_year)
    except SharpeUndefined:
        return math.nan


def walk_forward_from_runs(runs: dict, window: int, every: Optional[int] = None, name: Optional[str] = None) -> WalkForwardResult:
    """Stitch fixed-lambda runs into an out-of-sample walk-forward trajectory.

    ``runs`` maps each candidate lambda to a full-length backtest started
    from round 1. Every ``every`` rounds (default ``window // 4``) the
    candidate with the best trailing-``window`` Sharpe is selected (ties go
    to the smaller lambda) and traded until the next recalibration. Before
    the first full window the grid median is traded.
    """
    if not runs:
        raise ParameterError("lambda grid is empty")
    if window < 2:
        raise ParameterError(f"walk-forward window must be >= 2, got {window}")
    grid = sorted(runs)
    first = runs[grid[0]]
    T = first.T
    every = max(1, window // 4) if every is None else int(every)
    if every < 1:
        raise ParameterError("recalibration interval must be >= 1")
    truncated = window > T
    returns = {lam: runs[lam].daily_returns for lam in grid}

    current = grid[(len(grid) - 1) // 2]
    lambdas = np.empty(T)
    recal = []
    start = 2 if truncated else window
    next_recal = start
    for t in range(T):
        if t == next_recal:
            lo = 0 if truncated else t - window
            scores = [(_trailing_sharpe(returns[lam], lo, t, first.periods_per_year), lam) for lam in grid]
            best = None
            for score, lam in scores:
                if math.isnan(score):
                    continue
                if best is None or score > best[0]:
                    best = (score, lam)
            if best is not None:
                current = best[1]
            recal.append((t, current))
            next_recal += every
        lambdas[t] = current

    index = {lam: i for i, lam in enumerate(grid)}
    pick = np.array([index[lam] for lam in lambdas])

    def stitch(attr):
        arrays = [getattr(runs[lam], attr) for lam in grid]
        if any(a is None for a in arrays):
            return None
        stacked = np.stack(arrays)
        return stacked[pick, np.arange(T)]

    report = BacktestReport(
        name=name or "EREP(lambda_WF)",
        names=first.names,
        dates=first.dates,
        portfolios=stitch("portfolios"),
        factors=stitch("factors"),
        reg_losses=stitch("reg_losses"),
        allocations=stitch("allocations"),
        allocation_labels=first.allocation_labels,
        curvature_term=stitch("curvature_term"),
        exposure=stitch("exposure"),
        converged=stitch("converged"),
        periods_per_year=first.periods_per_year,
        log_returns=first.log_returns,
        meta={"window": window, "every": every, "grid": list(grid), "window_truncated": truncated},
    )
    return WalkForwardResult(lambdas, report, recal, window, every, truncated)


def candidate_runs(market, bases, sectors, lambda_grid, params: Optional[CompositeStepParams] = None, **kw) -> dict:
    """One full fixed-lambda ensemble backtest per grid value."""
    runs = {}
    p = len(bases) * sectors.m
    for lam in sorted(set(float(v) for v in lambda_grid)):
        if params is None:
            prm = default_params(market.relatives, p, lam)
        else:
            prm = CompositeStepParams(params.eta, lam, params.epsilon, params.inner_tol, params.inner_max_iter)
        runs[lam] = run_erep(market, bases, sectors, prm, **kw)
    return runs


def walk_forward_lambda(
    market: MarketSeries,
    bases,
    sectors: Grouping,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    window: int = 20,
    every: Optional[int] = None,
    params: Optional[CompositeStepParams] = None,
    runs: Optional[dict] = None,
    **kw,
):
    """Walk-forward lambda selection; returns ``(per-round lambdas, report)``."""
    if not len(lambda_grid):
        raise ParameterError("lambda grid is empty")
    if runs is None:
        runs = candidate_runs(market, bases, sectors, lambda_grid, params, **kw)
    result = walk_forward_from_runs(runs, window, every)
    return result.lambdas, result.report


def window_sensitivity(runs: dict, windows: Sequence[int]) -> list:
    """``(window, overall Sharpe)`` of the walk-forward trajectory per window."""
    out = []
    for w in windows:
        rep = walk_forward_from_runs(runs, int(w)).report
        try:
            out.append((int(w), rep.sharpe()))
        except SharpeUndefined:
            out.append((int(w), math.nan))
    return out
