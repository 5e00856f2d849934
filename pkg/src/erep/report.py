"""Per-round backtest record and its CSV / JSON serialization."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError

PERIODS_PER_YEAR = 252


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value) + 0.0)


@dataclass
class BacktestReport:
    """Trajectory of one online algorithm over a market series.

    ``factors[t] = <b_t, x_t>`` is the daily wealth multiplier. Optional
    arrays are None for algorithms that do not produce them (e.g. a plain
    base strategy has no ensemble allocation).
    """

    name: str
    names: tuple
    dates: tuple
    portfolios: np.ndarray
    factors: np.ndarray
    reg_losses: Optional[np.ndarray] = None
    allocations: Optional[np.ndarray] = None
    allocation_labels: Optional[tuple] = None
    curvature_term: Optional[np.ndarray] = None
    exposure: Optional[np.ndarray] = None
    converged: Optional[np.ndarray] = None
    periods_per_year: int = PERIODS_PER_YEAR
    log_returns: bool = False
    meta: dict = field(default_factory=dict)
    # kept in memory for diagnostics, never serialized
    extras: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.factors = np.asarray(self.factors, dtype=float)
        if np.any(~np.isfinite(self.factors)) or np.any(self.factors <= 0):
            raise DataError(f"{self.name}: nonpositive daily wealth factor")
        if self.reg_losses is None:
            self.reg_losses = self.losses.copy()

    @property
    def T(self) -> int:
        return self.factors.size

    @property
    def losses(self) -> np.ndarray:
        return -np.log(self.factors)

    @property
    def log_wealth(self) -> np.ndarray:
        return np.cumsum(np.log(self.factors))

    @property
    def wealth(self) -> np.ndarray:
        return np.exp(self.log_wealth)

    @property
    def total_return(self) -> float:
        """Final wealth multiple from an initial wealth of 1."""
        return float(np.prod(self.factors))

    @property
    def daily_returns(self) -> np.ndarray:
        if self.log_returns:
            return np.log(self.factors)
        return self.factors - 1.0

    def sharpe(self, start: int = 0, stop: Optional[int] = None) -> float:
        from .evaluation import sharpe_ratio

        return sharpe_ratio(self.daily_returns[start:stop], self.periods_per_year)

    def summary(self) -> dict:
        from .evaluation import SharpeUndefined

        try:
            sharpe = self.sharpe()
        except SharpeUndefined:
            sharpe = None
        out = {
            "name": self.name,
            "rounds": self.T,
            "total_return": self.total_return,
            "log_wealth": float(self.log_wealth[-1]),
            "sharpe": sharpe,
            "periods_per_year": self.periods_per_year,
            "return_kind": "log" if self.log_returns else "simple",
        }
        if self.exposure is not None:
            out["mean_max_exposure"] = float(np.mean(self.exposure))
        if self.curvature_term is not None:
            out["curvature_sum"] = float(np.sum(self.curvature_term))
        if self.converged is not None:
            out["solver_warnings"] = int(np.count_nonzero(~self.converged))
        for key, value in self.meta.items():
            out[key] = value
        return out

    def columns(self) -> list:
        cols = ["round", "date"] + [f"b:{s}" for s in self.names]
        if self.allocations is not None:
            cols += [f"w:{s}" for s in self.allocation_labels]
        cols += ["factor", "loss", "reg_loss", "log_wealth"]
        if self.curvature_term is not None:
            cols.append("curvature_term")
        if self.exposure is not None:
            cols.append("exposure")
        if self.converged is not None:
            cols.append("converged")
        return cols

    def to_csv(self, path) -> None:
        log_wealth = self.log_wealth
        losses = self.losses
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns())
            for t in range(self.T):
                row = [str(t + 1), self.dates[t]] + [_fmt(v) for v in self.portfolios[t]]
                if self.allocations is not None:
                    row += [_fmt(v) for v in self.allocations[t]]
                row += [_fmt(self.factors[t]), _fmt(losses[t]), _fmt(self.reg_losses[t]), _fmt(log_wealth[t])]
                if self.curvature_term is not None:
                    row.append(_fmt(self.curvature_term[t]))
                if self.exposure is not None:
                    row.append(_fmt(self.exposure[t]))
                if self.converged is not None:
                    row.append(_fmt(self.converged[t]))
                writer.writerow(row)

    def write_summary(self, path) -> None:
        write_json(self.summary(), path)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(data: dict, path) -> None:
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_trace(path, header, rows) -> None:
    """Two-or-more column CSV for external plotting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
