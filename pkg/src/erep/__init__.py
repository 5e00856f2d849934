"""Exposure-regularized ensembles of online portfolio strategies.

Base strategies (EG, Anticor, OLMAR) are run separately on each sector of a
stock universe; an online Newton step with a sector-exposure group penalty
learns how to allocate wealth across the resulting sub-algorithms.
"""

from .baselines import OrsadParams, backtest_strategy, maons_run, orsad_run, orsad_step
from .ensemble import (
    EnsembleState,
    SubAlgorithmGrid,
    aggregate_portfolio,
    build_grid,
    collect_portfolios,
    default_params,
    ensemble_grouping,
    erep_step,
    grad_g,
    loss_g,
    run_erep,
)
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DataError,
    ErepError,
    GroupingError,
    NumericError,
    ParameterError,
    ParseError,
    SolverError,
)
from .evaluation import (
    DEFAULT_LAMBDA_GRID,
    HindsightSolution,
    best_fixed_allocation,
    cumulative_wealth,
    lemma2_report,
    regret_curve,
    sharpe_ratio,
    walk_forward_lambda,
)
from .market_data import Grouping, MarketSeries, load_grouping, load_prices_csv
from .optimizer import (
    CompositeStepParams,
    bregman,
    brute_force_simplex_min,
    composite_newton_step,
    group_norm,
    group_norm_subgradient,
    project_simplex,
    theory_eta,
    update_curvature,
)
from .report import BacktestReport
from .strategies import MIXED, OLMAR_ONLY, SETTINGS, StrategySpec, anticor_step, eg_update, olmar_step, strategy_init

__version__ = "0.1.0"
