"""Compare base strategies, MAons, ORSAD and the regularized ensemble on SP500.

Uses the bundled SP500 benchmark (25 anonymized stocks, 1275 trading days)
and the bundled correlation-based sector map. Takes about half a minute.

    python3 demos/sp500_comparison.py [mixed|olmar_only]
"""

import sys

from erep.cli import compare_reports, load_inputs
from erep.config import config_from_dict

setting = sys.argv[1] if len(sys.argv) > 1 else "mixed"
config = config_from_dict({
    "data": {"path": "bundled:sp500"},
    "setting": setting,
    "erep": {"lambda": 0.1, "walk_forward": {"window": 20}},
})
market, sectors = load_inputs(config)
print(f"{setting}: {market.T} rounds, {market.n} stocks, {sectors.m} sectors")
for report in compare_reports(config, market, sectors):
    print(f"  {report.name:<18} total return {report.total_return:8.4f}   Sharpe {report.sharpe():.3f}")
