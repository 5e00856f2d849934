"""Base online portfolio strategies.

Every strategy starts from the uniform portfolio, consumes one row of
relative prices per round and emits the portfolio for the next round.
"""

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericError, ParameterError
from .optimizer import project_simplex

KINDS = ("EG", "Anticor", "OLMAR", "UniformCRP")

DEFAULTS = {
    "EG": {"eta": 0.05},
    "Anticor": {"window": 20},
    "OLMAR": {"window": 20, "eps": 10.0},
    "UniformCRP": {},
}


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    eta: Optional[float] = None
    window: Optional[int] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        for key, value in DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.kind == "EG" and not self.eta > 0:
            raise ParameterError(f"EG learning rate must be > 0, got {self.eta}")
        if self.kind in ("Anticor", "OLMAR"):
            if int(self.window) != self.window or self.window < 2:
                raise ParameterError(f"{self.kind} window must be an integer >= 2, got {self.window}")
            object.__setattr__(self, "window", int(self.window))
        if self.kind == "OLMAR" and not self.eps > 1:
            raise ParameterError(f"OLMAR threshold must be > 1, got {self.eps}")

    @property
    def label(self) -> str:
        if self.kind == "EG":
            return f"EG(eta={self.eta:g})"
        if self.kind == "Anticor":
            return f"Anticor(w={self.window})"
        if self.kind == "OLMAR":
            return f"OLMAR(w={self.window})"
        return "UniformCRP"

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update({k: getattr(self, k) for k in DEFAULTS[self.kind]})
        return out


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def eg_update(b, x, eta):
    """Exponentiated-gradient step ``b_i * exp(eta * x_i / <b, x>)``, renormalized."""
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    z = eta * x / np.dot(b, x)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite exponent in EG update")
    z -= z.max()
    out = b * np.exp(z)
    return out / out.sum()


def olmar_predict(prices, window):
    """Moving-average relative ``mean_j p[t-j] / p[t]`` over the last ``window`` rows."""
    prices = np.asarray(prices, dtype=float)
    recent = prices[-window:]
    return recent.mean(axis=0) / prices[-1]


def olmar_step(prices, b, window, eps):
    """OLMAR-1 update from a raw-price history (oldest row first).

    With fewer than ``window`` rows the available rows are used.
    """
    b = np.asarray(b, dtype=float)
    x_pred = olmar_predict(prices, window)
    dev = x_pred - x_pred.mean()
    denom = np.dot(dev, dev)
    # a deviation at roundoff level is a zero deviation (e.g. equal price paths)
    if denom <= (8 * np.finfo(float).eps * np.max(np.abs(x_pred))) ** 2 * dev.size:
        return b.copy()
    step = max(0.0, eps - np.dot(b, x_pred)) / denom
    return project_simplex(b + step * dev)


def anticor_step(log_relatives, b, window):
    """Anticor transfer over the last two ``window``-day log-relative windows.

    Wealth moves from stock i to stock j when i outperformed j in the most
    recent window and the lagged cross-correlation ``M[i, j]`` is positive.
    Correlations touching a zero-variance column are 0.
    """
    b = np.asarray(b, dtype=float)
    hist = np.asarray(log_relatives, dtype=float)
    w = window
    if hist.shape[0] < 2 * w:
        return b.copy()
    lx1 = hist[-2 * w:-w]
    lx2 = hist[-w:]
    mu1 = lx1.mean(axis=0)
    mu2 = lx2.mean(axis=0)
    sd1 = lx1.std(axis=0, ddof=1)
    sd2 = lx2.std(axis=0, ddof=1)
    cov = (lx1 - mu1).T @ (lx2 - mu2) / (w - 1)
    scale = np.outer(sd1, sd2)
    corr = np.zeros_like(cov)
    nz = scale > 0
    corr[nz] = cov[nz] / scale[nz]

    self_neg = np.maximum(0.0, -np.diag(corr))
    claim = corr + self_neg[:, None] + self_neg[None, :]
    active = (mu2[:, None] > mu2[None, :]) & (corr > 0)
    claim = np.where(active, claim, 0.0)

    totals = claim.sum(axis=1)
    transfer = np.zeros_like(claim)
    pos = totals > 0
    transfer[pos] = b[pos, None] * claim[pos] / totals[pos, None]
    out = b - transfer.sum(axis=1) + transfer.sum(axis=0)
    out = np.maximum(out, 0.0)
    return out / out.sum()


class Strategy:
    """Mutable single-owner strategy state."""

    def __init__(self, spec: StrategySpec, n: int):
        if n < 1:
            raise ParameterError(f"stock count must be >= 1, got {n}")
        self.spec = spec
        self.n = n
        self.portfolio = uniform(n)
        self.rounds = 0

    def update(self, x) -> np.ndarray:
        """Consume one row of relatives; return the portfolio for the next round."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected {self.n} relatives, got shape {x.shape}")
        self.rounds += 1
        self.portfolio = self._next(x)
        return self.portfolio

    def _next(self, x):
        raise NotImplementedError


class UniformCRPStrategy(Strategy):
    def _next(self, x):
        return self.portfolio


class EGStrategy(Strategy):
    def _next(self, x):
        return eg_update(self.portfolio, x, self.spec.eta)


class OLMARStrategy(Strategy):
    def __init__(self, spec, n):
        super().__init__(spec, n)
        # price history reconstructed from relatives, starting at 1
        self.prices = deque([np.ones(n)], maxlen=spec.window)

    def _next(self, x):
        self.prices.append(self.prices[-1] * x)
        return olmar_step(np.array(self.prices), self.portfolio, self.spec.window, self.spec.eps)


class AnticorStrategy(Strategy):
    def __init__(self, spec, n):
        super().__init__(spec, n)
        self.history = deque(maxlen=2 * spec.window)

    def _next(self, x):
        self.history.append(np.log(x))
        if len(self.history) < 2 * self.spec.window:
            return self.portfolio
        return anticor_step(np.array(self.history), self.portfolio, self.spec.window)


_CLASSES = {
    "EG": EGStrategy,
    "Anticor": AnticorStrategy,
    "OLMAR": OLMARStrategy,
    "UniformCRP": UniformCRPStrategy,
}


def strategy_init(spec: StrategySpec, n: int) -> Strategy:
    return _CLASSES[spec.kind](spec, n)


def run_strategy(spec: StrategySpec, relatives) -> np.ndarray:
    """Portfolios played on every round, shape (T, n); row t is chosen before seeing row t."""
    relatives = np.asarray(relatives, dtype=float)
    state = strategy_init(spec, relatives.shape[1])
    out = np.empty_like(relatives)
    for t, x in enumerate(relatives):
        out[t] = state.portfolio
        state.update(x)
    return out


MIXED = (StrategySpec("EG", eta=0.05), StrategySpec("Anticor", window=20), StrategySpec("OLMAR", window=20, eps=10.0))
OLMAR_ONLY = tuple(StrategySpec("OLMAR", window=w, eps=10.0) for w in (10, 15, 20))
SETTINGS = {"mixed": MIXED, "olmar_only": OLMAR_ONLY}
