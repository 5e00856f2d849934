"""How much does the walk-forward window matter?

Runs each candidate lambda once over the full SP500 history, then stitches
walk-forward trajectories for trailing windows 10, 20, ..., 300 and prints
the resulting Sharpe ratio per window.

    python3 demos/walk_forward_windows.py
"""

import numpy as np

from erep.cli import grid_runs, load_inputs
from erep.config import config_from_dict
from erep.evaluation import walk_forward_from_runs, window_sensitivity

config = config_from_dict({"data": {"path": "bundled:sp500"}, "erep": {"walk_forward": {"window": 20}}})
market, sectors = load_inputs(config)
runs = grid_runs(config, market, sectors)
for lam, rep in runs.items():
    print(f"fixed lambda={lam:<5g} Sharpe {rep.sharpe():.3f}")

result = walk_forward_from_runs(runs, window=20)
values, counts = np.unique(result.lambdas, return_counts=True)
print("rounds traded per lambda (window 20):", dict(zip(values.tolist(), counts.tolist())))

trace = window_sensitivity(runs, range(10, 301, 10))
sharpes = np.array([s for _, s in trace])
for window, sharpe in trace:
    print(f"  window {window:>3}: Sharpe {sharpe:.3f}")
print(f"spread {sharpes.max() - sharpes.min():.3f} ({100 * (sharpes.max() - sharpes.min()) / sharpes.mean():.1f}% of mean)")
