"""Run configuration: one YAML/JSON manifest plus command-line overrides.

Relative paths in a config file are resolved against the file's directory.
``bundled:<name>`` refers to a dataset shipped in ``erep/data``:

==================  =========================  ============================
name                prices                      grouping
==================  =========================  ============================
``sp500``           ``sp500.csv`` (prices)      ``sp500_sectors.txt``
``synthetic8``      ``synthetic8.csv``          ``synthetic8_sectors.txt``
``flat2``           ``flat2.csv`` (prices)      ``flat2_groups.txt``
==================  =========================  ============================
"""

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError, ParameterError
from .evaluation import DEFAULT_LAMBDA_GRID
from .strategies import SETTINGS, StrategySpec

BUNDLED = {
    "sp500": ("sp500.csv", "raw_prices", "sp500_sectors.txt"),
    "synthetic8": ("synthetic8.csv", "relatives", "synthetic8_sectors.txt"),
    "flat2": ("flat2.csv", "raw_prices", "flat2_groups.txt"),
}
BUNDLED_PREFIX = "bundled:"

# default Sharpe-vs-window sweep: trailing windows 10, 20, ..., 300
DEFAULT_SENSITIVITY_WINDOWS = tuple(range(10, 301, 10))


def bundled_path(filename: str) -> Path:
    return Path(str(resources.files("erep") / "data" / filename))


@dataclass(frozen=True)
class WalkForwardSpec:
    grid: tuple = DEFAULT_LAMBDA_GRID
    window: int = 20
    every: Optional[int] = None

    def __post_init__(self):
        if not self.grid:
            raise ConfigError("walk_forward.grid must not be empty")
        if any(not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0) for v in self.grid):
            raise ConfigError(f"walk_forward.grid values must be finite and >= 0, got {list(self.grid)}")
        if not (isinstance(self.window, int) and self.window >= 2):
            raise ConfigError(f"walk_forward.window must be an integer >= 2, got {self.window!r}")
        if self.every is not None and not (isinstance(self.every, int) and self.every >= 1):
            raise ConfigError(f"walk_forward.every must be a positive integer, got {self.every!r}")


@dataclass(frozen=True)
class RunConfig:
    data_path: Path
    data_mode: str
    grouping_path: Path
    setting: str
    bases: tuple
    lam: Optional[float] = None
    walk_forward: Optional[WalkForwardSpec] = None
    eta: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: float = 1.0
    method: str = "accelerated"
    show_bases: bool = True
    maons: bool = True
    orsad: bool = True
    orsad_eta: Optional[float] = None
    orsad_K: Optional[float] = None
    periods_per_year: int = 252
    log_returns: bool = False
    sensitivity_windows: tuple = DEFAULT_SENSITIVITY_WINDOWS
    rounds: Optional[int] = None
    out: Path = Path("out")
    strict: bool = False
    source: Optional[Path] = field(default=None, compare=False)

    def require_single_erep_mode(self):
        """Backtests run exactly one of fixed lambda or walk-forward."""
        if (self.lam is None) == (self.walk_forward is None):
            raise ConfigError("specify exactly one of erep.lambda or erep.walk_forward")

    def require_erep_mode(self):
        if self.lam is None and self.walk_forward is None:
            raise ConfigError("specify erep.lambda and/or erep.walk_forward")

    def summary(self) -> dict:
        """Plain description of the run, embedded into output summaries."""
        return {
            "setting": self.setting,
            "bases": [b.to_dict() for b in self.bases],
            "lambda": self.lam,
            "walk_forward": None
            if self.walk_forward is None
            else {"grid": list(self.walk_forward.grid), "window": self.walk_forward.window, "every": self.walk_forward.every},
            "eta": self.eta,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "method": self.method,
            "rounds": self.rounds,
        }


# -- parsing helpers ---------------------------------------------------------


def _section(raw, key) -> dict:
    value = raw.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return value


def _number(value, key, allow_auto=False, minimum=None, strict_min=False):
    if value is None or (allow_auto and value == "auto"):
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{key}' must be a number{' or auto' if allow_auto else ''}, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"'{key}' must be finite")
    if minimum is not None and (value <= minimum if strict_min else value < minimum):
        raise ConfigError(f"'{key}' must be {'>' if strict_min else '>='} {minimum}, got {value}")
    return value


def _flag(value, key, default):
    if value is None:
        return default
    if not isinstance(value, bool):
        raise ConfigError(f"'{key}' must be true or false, got {value!r}")
    return value


def _resolve(value, base: Path, key: str, kind: str):
    """Path for ``data.path`` / ``data.grouping``; returns ``(path, mode_or_None)``."""
    if not isinstance(value, str) or not value:
        raise ConfigError(f"'{key}' must be a non-empty string")
    if value.startswith(BUNDLED_PREFIX):
        name = value[len(BUNDLED_PREFIX):]
        if name not in BUNDLED:
            raise ConfigError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
        prices, mode, grouping = BUNDLED[name]
        return (bundled_path(prices), mode) if kind == "data" else (bundled_path(grouping), None)
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    return path, None


def parse_bases(setting) -> tuple:
    """``mixed`` / ``olmar_only`` or a list of ``{kind, eta, window, eps}`` mappings."""
    if isinstance(setting, str):
        if setting not in SETTINGS:
            raise ConfigError(f"unknown setting {setting!r}; choose from {sorted(SETTINGS)} or give a list")
        return setting, SETTINGS[setting]
    if isinstance(setting, (list, tuple)) and setting:
        bases = []
        for i, item in enumerate(setting):
            if isinstance(item, str):
                item = {"kind": item}
            if not isinstance(item, dict) or "kind" not in item:
                raise ConfigError(f"setting[{i}] must be a strategy name or a mapping with 'kind'")
            unknown = set(item) - {"kind", "eta", "window", "eps"}
            if unknown:
                raise ConfigError(f"setting[{i}]: unknown keys {sorted(unknown)}")
            try:
                bases.append(StrategySpec(**item))
            except (ParameterError, ValueError, TypeError) as exc:
                raise ConfigError(f"setting[{i}]: {exc}") from exc
        return "custom", tuple(bases)
    raise ConfigError("'setting' must be 'mixed', 'olmar_only' or a non-empty list of strategies")


def _walk_forward(raw) -> Optional[WalkForwardSpec]:
    if raw is None or raw is False:
        return None
    if raw is True:
        return WalkForwardSpec()
    if not isinstance(raw, dict):
        raise ConfigError("'erep.walk_forward' must be a mapping, true, or absent")
    unknown = set(raw) - {"grid", "window", "every"}
    if unknown:
        raise ConfigError(f"erep.walk_forward: unknown keys {sorted(unknown)}")
    grid = raw.get("grid", DEFAULT_LAMBDA_GRID)
    if not isinstance(grid, (list, tuple)):
        raise ConfigError("'erep.walk_forward.grid' must be a list")
    return WalkForwardSpec(
        grid=tuple(float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in grid),
        window=raw.get("window", 20),
        every=raw.get("every"),
    )


def _windows(raw):
    if raw is None:
        return DEFAULT_SENSITIVITY_WINDOWS
    if isinstance(raw, dict):
        try:
            return tuple(range(int(raw.get("start", 10)), int(raw.get("stop", 300)) + 1, int(raw.get("step", 10))))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"evaluation.sensitivity_windows: {exc}") from exc
    if isinstance(raw, (list, tuple)) and all(isinstance(v, int) and v >= 2 for v in raw):
        return tuple(raw)
    raise ConfigError("'evaluation.sensitivity_windows' must be a list of integers >= 2 or {start, stop, step}")


def config_from_dict(raw: dict, base_dir=".", source=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    base_dir = Path(base_dir)
    known = {"data", "setting", "erep", "baselines", "evaluation", "output", "strict"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    data = _section(raw, "data")
    if "path" not in data:
        raise ConfigError("'data.path' is required")
    data_path, bundled_mode = _resolve(data["path"], base_dir, "data.path", "data")
    mode = data.get("mode", bundled_mode or "raw_prices")
    if mode not in ("raw_prices", "relatives"):
        raise ConfigError(f"'data.mode' must be raw_prices or relatives, got {mode!r}")
    grouping_value = data.get("grouping")
    if grouping_value is None:
        if isinstance(data["path"], str) and data["path"].startswith(BUNDLED_PREFIX):
            grouping_value = data["path"]
        else:
            raise ConfigError("'data.grouping' is required")
    grouping_path, _ = _resolve(grouping_value, base_dir, "data.grouping", "grouping")
    rounds = data.get("rounds")
    if rounds is not None and not (isinstance(rounds, int) and not isinstance(rounds, bool) and rounds >= 1):
        raise ConfigError(f"'data.rounds' must be a positive integer, got {rounds!r}")

    setting, bases = parse_bases(raw.get("setting", "mixed"))

    erep = _section(raw, "erep")
    unknown = set(erep) - {"lambda", "walk_forward", "eta", "epsilon", "alpha", "method"}
    if unknown:
        raise ConfigError(f"erep: unknown keys {sorted(unknown)}")
    method = erep.get("method", "accelerated")
    if method not in ("accelerated", "subgradient"):
        raise ConfigError(f"'erep.method' must be accelerated or subgradient, got {method!r}")

    baselines = _section(raw, "baselines")
    orsad = baselines.get("orsad", True)
    orsad_eta = orsad_K = None
    if isinstance(orsad, dict):
        orsad_eta = _number(orsad.get("eta"), "baselines.orsad.eta", allow_auto=True, minimum=0)
        orsad_K = _number(orsad.get("K"), "baselines.orsad.K", allow_auto=True, minimum=0, strict_min=True)
        orsad = _flag(orsad.get("enabled"), "baselines.orsad.enabled", True)
    else:
        orsad = _flag(orsad, "baselines.orsad", True)

    evaluation = _section(raw, "evaluation")
    ppy = evaluation.get("periods_per_year", 252)
    if not (isinstance(ppy, int) and not isinstance(ppy, bool) and ppy >= 1):
        raise ConfigError(f"'evaluation.periods_per_year' must be a positive integer, got {ppy!r}")
    returns = evaluation.get("returns", "simple")
    if returns not in ("simple", "log"):
        raise ConfigError(f"'evaluation.returns' must be simple or log, got {returns!r}")

    out = raw.get("output", "out")
    if not isinstance(out, str):
        raise ConfigError("'output' must be a path string")
    out = Path(out)

    return RunConfig(
        data_path=data_path,
        data_mode=mode,
        grouping_path=grouping_path,
        setting=setting,
        bases=bases,
        lam=_number(erep.get("lambda"), "erep.lambda", minimum=0),
        walk_forward=_walk_forward(erep.get("walk_forward")),
        eta=_number(erep.get("eta"), "erep.eta", allow_auto=True, minimum=0, strict_min=True),
        epsilon=_number(erep.get("epsilon"), "erep.epsilon", allow_auto=True, minimum=0, strict_min=True),
        alpha=_number(erep.get("alpha", 1.0), "erep.alpha", minimum=0, strict_min=True),
        method=method,
        show_bases=_flag(baselines.get("bases"), "baselines.bases", True),
        maons=_flag(baselines.get("maons"), "baselines.maons", True),
        orsad=orsad,
        orsad_eta=orsad_eta,
        orsad_K=orsad_K,
        periods_per_year=ppy,
        log_returns=returns == "log",
        sensitivity_windows=_windows(evaluation.get("sensitivity_windows")),
        rounds=rounds,
        out=out if out.is_absolute() else base_dir / out,
        strict=_flag(raw.get("strict"), "strict", False),
        source=Path(source) if source else None,
    )


def load_config(path) -> RunConfig:
    """Read a YAML (or JSON, which is valid YAML) config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML/JSON: {exc}") from exc
    return config_from_dict(raw or {}, base_dir=path.parent, source=path)


def apply_overrides(config: RunConfig, lam=None, setting=None, out=None, window=None, grid=None, strict=None,
                    exclusive=False) -> RunConfig:
    """Command-line flags win over the file.

    ``--lambda`` sets the fixed lambda; ``--window`` / ``--grid`` set (or
    adjust) walk-forward. With ``exclusive`` (single-run commands), a flag
    for one mode also clears the other mode inherited from the file.
    """
    changes = {}
    if setting is not None:
        changes["setting"], changes["bases"] = parse_bases(setting)
    if out is not None:
        changes["out"] = Path(out)
    if strict:
        changes["strict"] = True
    if lam is not None:
        changes["lam"] = _number(lam, "--lambda", minimum=0)
    if window is not None or grid is not None:
        wf = config.walk_forward or WalkForwardSpec()
        if grid is not None:
            wf = replace(wf, grid=tuple(grid))
        if window is not None:
            wf = replace(wf, window=window)
        changes["walk_forward"] = wf
    if exclusive:
        if lam is not None and "walk_forward" not in changes:
            changes["walk_forward"] = None
        if "walk_forward" in changes and changes["walk_forward"] is not None and lam is None:
            changes["lam"] = None
    return replace(config, **changes) if changes else config


def check_files(config: RunConfig) -> None:
    """Referenced files must exist at load time."""
    for what, path in (("data file", config.data_path), ("grouping file", config.grouping_path)):
        if not Path(path).is_file():
            raise ConfigError(f"{what} not found: {path}")

