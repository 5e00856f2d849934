"""Price ingestion, relative-price series and stock groupings."""

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import GroupingError, InsufficientDataError, ParseError, ValidationError

DATE_COLUMN = "date"


@dataclass(frozen=True)
class MarketSeries:
    """Daily relative prices ``x[t, i] = close[t, i] / close[t - 1, i]``.

    ``relatives`` has shape (T, n). ``dates`` are labels only.
    """

    names: tuple
    relatives: np.ndarray
    dates: Optional[tuple] = None

    def __post_init__(self):
        rel = np.array(self.relatives, dtype=float)
        if rel.ndim != 2 or rel.shape[0] < 1 or rel.shape[1] < 1:
            raise ValidationError(f"relatives must be a non-empty T x n matrix, got shape {rel.shape}")
        if len(self.names) != rel.shape[1]:
            raise ValidationError(f"{len(self.names)} names for {rel.shape[1]} columns")
        _check_positive(rel, "relative price")
        rel.setflags(write=False)
        object.__setattr__(self, "relatives", rel)
        object.__setattr__(self, "names", tuple(str(s) for s in self.names))
        if self.dates is not None:
            if len(self.dates) != rel.shape[0]:
                raise ValidationError(f"{len(self.dates)} dates for {rel.shape[0]} rows")
            object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))

    @property
    def T(self) -> int:
        return self.relatives.shape[0]

    @property
    def n(self) -> int:
        return self.relatives.shape[1]

    def date_label(self, t: int) -> str:
        return self.dates[t] if self.dates is not None else str(t + 1)

    def head(self, T: int) -> "MarketSeries":
        """First ``T`` rounds."""
        dates = self.dates[:T] if self.dates is not None else None
        return MarketSeries(self.names, self.relatives[:T], dates)

    def prices(self) -> np.ndarray:
        """Price paths reconstructed with an initial price of 1, shape (T + 1, n)."""
        return prices_from_relatives(self.relatives)


def prices_from_relatives(relatives) -> np.ndarray:
    rel = np.asarray(relatives, dtype=float)
    out = np.ones((rel.shape[0] + 1, rel.shape[1]))
    np.cumprod(rel, axis=0, out=out[1:])
    return out


def _check_positive(values, what, row_offset=0, names=None):
    bad = ~(np.isfinite(values) & (values > 0))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        col = names[c] if names is not None else int(c)
        raise ValidationError(
            f"{what} must be finite and strictly positive, got {values[r, c]!r} "
            f"at row {r + row_offset}, column {col!r}"
        )


def load_prices_csv(path, mode: str = "raw_prices") -> MarketSeries:
    """Read a header-first CSV of closing prices or relative prices.

    ``mode="raw_prices"`` converts T price rows into T - 1 relative rows;
    ``mode="relatives"`` takes the rows verbatim. A leading column named
    ``date`` is kept as row labels.
    """
    if mode not in ("raw_prices", "relatives"):
        raise ValueError(f"unknown mode {mode!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    has_dates = header[0].lower() == DATE_COLUMN
    names = header[1:] if has_dates else header
    if not names:
        raise ParseError(f"{path}: header has no stock names", row=1)

    values = np.empty((len(rows) - 1, len(names)))
    dates = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} cells, got {len(row)}", row=r)
        cells = row[1:] if has_dates else row
        if has_dates:
            dates.append(row[0].strip())
        for c, cell in enumerate(cells):
            try:
                values[r - 2, c] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {cell!r}", row=r, column=names[c]) from None

    if mode == "raw_prices":
        if values.shape[0] < 2:
            raise InsufficientDataError(f"{path}: need at least 2 price rows, got {values.shape[0]}")
        _check_positive(values, "price", row_offset=2, names=names)
        relatives = values[1:] / values[:-1]
        dates = dates[1:]
    else:
        if values.shape[0] < 1:
            raise InsufficientDataError(f"{path}: no data rows")
        _check_positive(values, "relative price", row_offset=2, names=names)
        relatives = values
    return MarketSeries(tuple(names), relatives, tuple(dates) if has_dates else None)


def write_relatives_csv(series: MarketSeries, path) -> None:
    """Write relatives with round-trip exact float formatting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(series.names)
        if series.dates is not None:
            header = [DATE_COLUMN] + header
        writer.writerow(header)
        for t, row in enumerate(series.relatives):
            cells = [repr(float(v)) for v in row]
            if series.dates is not None:
                cells = [series.dates[t]] + cells
            writer.writerow(cells)


@dataclass(frozen=True)
class Grouping:
    """Named index sets over ``range(n)``. Groups may overlap."""

    labels: tuple
    groups: tuple
    n: int
    _owner: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.labels) != len(self.groups):
            raise GroupingError("labels and groups differ in length")
        if not self.groups:
            raise GroupingError("grouping has no groups")
        groups = []
        covered = np.zeros(self.n, dtype=int)
        for label, g in zip(self.labels, self.groups):
            idx = np.unique(np.asarray(g, dtype=int))
            if idx.size == 0:
                raise GroupingError(f"group {label!r} is empty")
            if idx[0] < 0 or idx[-1] >= self.n:
                raise GroupingError(f"group {label!r} has indices outside 0..{self.n - 1}")
            idx.setflags(write=False)
            groups.append(idx)
            covered[idx] += 1
        if (covered == 0).any():
            raise GroupingError(f"index {int(np.argmin(covered))} is covered by no group")
        object.__setattr__(self, "groups", tuple(groups))
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if (covered == 1).all():
            owner = np.empty(self.n, dtype=int)
            for j, g in enumerate(groups):
                owner[g] = j
            owner.setflags(write=False)
            object.__setattr__(self, "_owner", owner)

    @classmethod
    def from_sets(cls, sets: Sequence, n: Optional[int] = None, labels=None) -> "Grouping":
        sets = [list(s) for s in sets]
        if n is None:
            n = 1 + max(max(s) for s in sets if s) if any(sets) else 0
        if labels is None:
            labels = [f"g{j + 1}" for j in range(len(sets))]
        return cls(tuple(labels), tuple(sets), int(n))

    @classmethod
    def single(cls, n: int, label: str = "all") -> "Grouping":
        return cls((label,), (range(n),), n)

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple:
        return tuple(len(g) for g in self.groups)

    @property
    def partition(self) -> bool:
        """True iff the groups are pairwise disjoint and cover every index."""
        return self._owner is not None

    @property
    def owner(self) -> np.ndarray:
        """Group index of every coordinate (partitions only)."""
        if self._owner is None:
            raise GroupingError("grouping is not a partition")
        return self._owner

    def indicator(self) -> np.ndarray:
        """m x n 0/1 membership matrix."""
        out = np.zeros((self.m, self.n))
        for j, g in enumerate(self.groups):
            out[j, g] = 1.0
        return out


_GROUP_LINE = re.compile(r"^\s*([^:]+?)\s*:\s*(.*)$")


def parse_grouping(text: str, names: Sequence[str], source: str = "<string>") -> Grouping:
    index = {name: i for i, name in enumerate(names)}
    labels, groups = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        match = _GROUP_LINE.match(line)
        if match is None:
            raise ParseError(f"{source}: expected 'Group: t1,t2,...'", row=lineno)
        label, body = match.groups()
        tickers = [t.strip() for t in body.split(",") if t.strip()]
        if not tickers:
            raise GroupingError(f"{source}: group {label!r} is empty (line {lineno})")
        unknown = [t for t in tickers if t not in index]
        if unknown:
            raise GroupingError(f"{source}: unknown identifier {unknown[0]!r} in group {label!r}")
        labels.append(label)
        groups.append([index[t] for t in tickers])
    if not groups:
        raise GroupingError(f"{source}: no groups defined")
    covered = set().union(*map(set, groups))
    missing = [name for i, name in enumerate(names) if i not in covered]
    if missing:
        raise GroupingError(f"{source}: {missing[0]!r} is covered by no group")
    return Grouping(tuple(labels), tuple(groups), len(names))


def load_grouping(path, names: Sequence[str]) -> Grouping:
    """Load ``GroupName: t1,t2,...`` lines resolved against ``names``."""
    path = Path(path)
    return parse_grouping(path.read_text(encoding="utf-8"), list(names), source=str(path))


def format_grouping(grouping: Grouping, names: Sequence[str]) -> str:
    lines = [f"{label}: {','.join(names[i] for i in g)}" for label, g in zip(grouping.labels, grouping.groups)]
    return "\n".join(lines) + "\n"
