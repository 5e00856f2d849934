"""Command-line front end: ``erep backtest | compare | diagnose``.

Exit codes: 0 success, 2 configuration error, 3 data violation,
4 solver abort (``--strict`` and an inner solver failed to converge).
"""

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .baselines import OrsadParams, backtest_strategy, default_orsad_params, maons_run, orsad_run
from .config import RunConfig, apply_overrides, check_files, load_config
from .ensemble import default_params, run_erep
from .errors import ConfigError, ConvergenceWarning, DataError, NumericError, ParameterError, SolverError
from .evaluation import (
    SharpeUndefined,
    exp_concavity_slack,
    lemma2_report,
    report_regret,
    walk_forward_from_runs,
    wealth_matrix,
    window_sensitivity,
)
from .market_data import Grouping, MarketSeries, load_grouping, load_prices_csv
from .report import write_json, write_trace

logger = logging.getLogger("erep")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
COMPARE_COLUMNS = ("algorithm", "total_return", "sharpe")


# -- shared plumbing -----------------------------------------------------------


def load_inputs(config: RunConfig):
    check_files(config)
    market = load_prices_csv(config.data_path, config.data_mode)
    if config.rounds is not None:
        market = market.head(min(config.rounds, market.T))
    sectors = load_grouping(config.grouping_path, market.names)
    return market, sectors


def _run_kw(config: RunConfig) -> dict:
    return {"method": config.method, "periods_per_year": config.periods_per_year, "log_returns": config.log_returns}


def fixed_lambda_run(config, market, sectors, lam):
    params = default_params(
        market.relatives,
        len(config.bases) * sectors.m,
        lam,
        alpha=config.alpha,
        eta=config.eta,
        epsilon=config.epsilon,
    )
    return run_erep(market, config.bases, sectors, params, name=f"EREP(lambda={lam:g})", **_run_kw(config))


def grid_runs(config, market, sectors, reuse=None):
    """Full-horizon run per walk-forward candidate; ``reuse`` maps lambda to an existing run."""
    reuse = reuse or {}
    runs = {}
    for lam in sorted(set(float(v) for v in config.walk_forward.grid)):
        runs[lam] = reuse[lam] if lam in reuse else fixed_lambda_run(config, market, sectors, lam)
    return runs


def _sharpe_or_none(report):
    try:
        return report.sharpe()
    except SharpeUndefined:
        return None


def _ensure_out(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_converged(reports, strict):
    for rep in reports:
        if rep.converged is not None and not np.all(rep.converged):
            bad = int(np.count_nonzero(~rep.converged))
            msg = f"{rep.name}: inner solver missed tolerance on {bad} round(s)"
            if strict:
                raise SolverError(msg)
            logger.warning(msg)


def _input_summary(config, market, sectors):
    return {
        "data_file": Path(config.data_path).name,
        "data_mode": config.data_mode,
        "grouping_file": Path(config.grouping_path).name,
        "stocks": market.n,
        "rounds": market.T,
        "sectors": sectors.m,
    }


# -- commands ------------------------------------------------------------------


def cmd_backtest(config: RunConfig) -> int:
    """One EREP run (fixed lambda or walk-forward): ``backtest.csv`` + ``summary.json``."""
    config.require_single_erep_mode()
    market, sectors = load_inputs(config)
    out = _ensure_out(config)
    summary = {"config": config.summary(), "input": _input_summary(config, market, sectors)}
    if config.lam is not None:
        report = fixed_lambda_run(config, market, sectors, config.lam)
        _check_converged([report], config.strict)
        sol, regret = report_regret(report)
        summary["final_regret"] = float(regret[-1])
        summary["hindsight_certificate"] = sol.certificate
    else:
        wf = config.walk_forward
        runs = grid_runs(config, market, sectors)
        _check_converged(runs.values(), config.strict)
        result = walk_forward_from_runs(runs, wf.window, wf.every)
        report = result.report
        summary["recalibrations"] = [{"round": t + 1, "lambda": lam} for t, lam in result.recalibrations]
    summary["result"] = report.summary()
    report.to_csv(out / "backtest.csv")
    write_json(summary, out / "summary.json")
    print(f"{report.name}: total return {report.total_return:.6g}, Sharpe {_fmt_sharpe(_sharpe_or_none(report))}")
    return EXIT_OK


def _fmt_sharpe(value):
    return "undefined" if value is None else f"{value:.4f}"


def compare_reports(config: RunConfig, market: MarketSeries, sectors: Grouping) -> list:
    """Reports in the fixed table order: bases, MAons, ORSAD, EREP lambda, EREP lambda_WF."""
    config.require_erep_mode()
    kw = {"periods_per_year": config.periods_per_year, "log_returns": config.log_returns}
    reports = []
    if config.show_bases:
        reports += [backtest_strategy(spec, market, **kw) for spec in config.bases]
    if config.maons:
        params = default_params(market.relatives, len(config.bases), 0.0, alpha=config.alpha, eta=config.eta,
                                epsilon=config.epsilon)
        reports.append(maons_run(config.bases, market, params, method=config.method, **kw))
    if config.orsad:
        default = default_orsad_params(market, sectors, alpha=config.alpha)
        params = OrsadParams(
            eta=default.eta if config.orsad_eta is None else config.orsad_eta,
            K=default.K if config.orsad_K is None else config.orsad_K,
        )
        reports.append(orsad_run(market, sectors, params, **kw))
    fixed = None
    if config.lam is not None:
        fixed = fixed_lambda_run(config, market, sectors, config.lam)
        reports.append(fixed)
    if config.walk_forward is not None:
        reuse = {config.lam: fixed} if fixed is not None else None
        runs = grid_runs(config, market, sectors, reuse)
        _check_converged(runs.values(), config.strict)
        wf = config.walk_forward
        reports.append(walk_forward_from_runs(runs, wf.window, wf.every).report)
    _check_converged(reports, config.strict)
    return reports


def cmd_compare(config: RunConfig) -> int:
    """``compare.csv``: one row per algorithm with total return and Sharpe."""
    config.require_erep_mode()
    market, sectors = load_inputs(config)
    out = _ensure_out(config)
    reports = compare_reports(config, market, sectors)
    rows = []
    for rep in reports:
        sharpe = _sharpe_or_none(rep)
        rows.append((rep.name, rep.total_return, "" if sharpe is None else sharpe))
    write_trace(out / "compare.csv", COMPARE_COLUMNS, rows)
    width = max(len(r[0]) for r in rows)
    for name, total, sharpe in rows:
        print(f"{name:<{width}}  total return {total:>10.4f}  Sharpe {_fmt_sharpe(sharpe if sharpe != '' else None)}")
    return EXIT_OK


def cmd_diagnose(config: RunConfig) -> int:
    """Regret curve, curvature-sum report and (with walk-forward) the Sharpe-vs-window trace."""
    config.require_erep_mode()
    market, sectors = load_inputs(config)
    out = _ensure_out(config)
    if config.lam is not None:
        lam = config.lam
    else:
        grid = sorted(set(float(v) for v in config.walk_forward.grid))
        lam = grid[(len(grid) - 1) // 2]
    report = fixed_lambda_run(config, market, sectors, lam)
    _check_converged([report], config.strict)

    sol, regret = report_regret(report)
    write_trace(out / "regret.csv", ("round", "regret"), ((t + 1, r) for t, r in enumerate(regret)))

    params = report.extras["params"]
    bound_check = lemma2_report(report)
    R = wealth_matrix(report.extras["matrices"], market.relatives)
    slack = exp_concavity_slack(R, params.eta, n_pairs=1000, rng=0)
    write_json(
        {
            "lambda": lam,
            "eta": params.eta,
            "epsilon": params.epsilon,
            "statistic": bound_check.statistic,
            "bound": bound_check.bound,
            "satisfied": bound_check.satisfied,
            "rounds": report.T,
            "sub_algorithms": report.allocations.shape[1],
            "final_regret": float(regret[-1]),
            "hindsight_objective": sol.objective,
            "hindsight_certificate": sol.certificate,
            "hindsight_converged": sol.converged,
            "exp_concavity_min_slack": float(slack.min()),
        },
        out / "lemma2.json",
    )

    if config.walk_forward is not None:
        runs = grid_runs(config, market, sectors, reuse={lam: report})
        _check_converged(runs.values(), config.strict)
        trace = window_sensitivity(runs, config.sensitivity_windows)
        write_trace(out / "window_sensitivity.csv", ("window", "sharpe"),
                    ((w, "" if math.isnan(s) else s) for w, s in trace))
    print(f"final regret {regret[-1]:.6g}; curvature sum {bound_check.statistic:.4g} <= {bound_check.bound:.4g}: {bound_check.satisfied}")
    return EXIT_OK


COMMANDS = {"backtest": cmd_backtest, "compare": cmd_compare, "diagnose": cmd_diagnose}


# -- argument parsing ---------------------------------------------------------


def _grid(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--grid expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("--grid must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erep", description="Exposure-regularized ensemble portfolio backtests.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "backtest": "run one EREP configuration and write backtest.csv + summary.json",
        "compare": "compare base strategies, MAons, ORSAD and EREP; write compare.csv",
        "diagnose": "write regret.csv, lemma2.json and window_sensitivity.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--lambda", dest="lam", type=float, help="fixed regularization weight")
        p.add_argument("--setting", help="base-strategy setting: mixed or olmar_only")
        p.add_argument("--out", help="output directory")
        p.add_argument("--window", type=int, help="walk-forward trailing window (rounds)")
        p.add_argument("--grid", type=_grid, help="walk-forward lambda grid, e.g. 0,0.05,0.1")
        p.add_argument("--strict", action="store_true", help="abort (exit 4) when an inner solver misses tolerance")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            config = load_config(args.config)
            config = apply_overrides(
                config,
                lam=args.lam,
                setting=args.setting,
                out=args.out,
                window=args.window,
                grid=args.grid,
                strict=args.strict,
                exclusive=args.command == "backtest",
            )
            if config.strict:
                warnings.simplefilter("error", ConvergenceWarning)
            return COMMANDS[args.command](config)
    except (ConfigError, ParameterError, FileNotFoundError) as exc:
        print(f"erep: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NumericError) as exc:
        print(f"erep: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, ConvergenceWarning) as exc:
        print(f"erep: solver aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
