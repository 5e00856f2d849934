import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from erep.market_data import Grouping, MarketSeries  # noqa: E402
from erep.strategies import StrategySpec  # noqa: E402

SIMPLEX_TOL = 1e-9


def synthetic_market(T, n, seed=0, low=0.98, high=1.02):
    rng = np.random.default_rng(seed)
    return MarketSeries(tuple(f"S{i}" for i in range(n)), rng.uniform(low, high, size=(T, n)))


def pair_sectors(n):
    """Sectors of two consecutive stocks each."""
    return Grouping.from_sets([[2 * j, 2 * j + 1] for j in range(n // 2)], n=n)


def assert_simplex(v, tol=SIMPLEX_TOL):
    v = np.asarray(v)
    assert np.all(v >= -tol), v.min()
    assert abs(v.sum() - 1.0) <= tol, v.sum() - 1.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_market():
    return synthetic_market(120, 6, seed=3, low=0.95, high=1.05)


@pytest.fixture(scope="session")
def small_sectors():
    return Grouping.from_sets([[0, 1], [2, 3, 4], [5]], n=6, labels=["tech", "fin", "health"])


@pytest.fixture(scope="session")
def two_bases():
    return (StrategySpec("EG", eta=0.05), StrategySpec("OLMAR", window=5))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
