"""CSV ingestion, synthetic series, sliding windows, and normalization.

Every column is treated as its own univariate stream. Splits partition the
time axis; windows never straddle a split boundary. Normalization statistics
come from the train split only and are applied identically everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rng import Rng


class ParseError(ValueError):
    """CSV body is not rectangular numeric data."""


@dataclass
class SeriesTable:
    columns: list[str]
    values: dict[str, np.ndarray]

    def __post_init__(self):
        lengths = {len(v) for v in self.values.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths: {sorted(lengths)}")
        for name, v in self.values.items():
            if not np.isfinite(v).all():
                raise ValueError(f"column {name!r} contains non-finite values")

    @property
    def length(self) -> int:
        return len(next(iter(self.values.values())))


def load_csv(path) -> SeriesTable:
    """Parse a rectangular numeric CSV.

    An optional header row and an optional leading timestamp column are
    auto-detected (the latter by float-parse failure of column 0 in the
    first data row). Failures cite the 1-based file line and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i + 1, [c.strip() for c in row])
                for i, row in enumerate(csv.reader(fh)) if row]
    if not rows:
        raise ParseError(f"{path}: no data rows")

    def is_number(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    header = None
    if not all(is_number(c) for c in rows[0][1]):
        header = rows[0][1]
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data rows")
    width = len(rows[0][1])
    skip_first = not is_number(rows[0][1][0])
    first_col = 1 if skip_first else 0
    names = (header[first_col:] if header is not None
             else [f"c{j}" for j in range(width - first_col)])
    data = [[] for _ in names]
    for line_no, cells in rows:
        if len(cells) != width:
            raise ParseError(f"{path}: row {line_no} has {len(cells)} cells, expected {width}")
        for j in range(first_col, width):
            try:
                data[j - first_col].append(float(cells[j]))
            except ValueError:
                raise ParseError(
                    f"{path}: cell {cells[j]!r} at row {line_no}, column {j + 1} "
                    f"is not numeric") from None
    values = {name: np.asarray(col, dtype=np.float64)
              for name, col in zip(names, data)}
    return SeriesTable(list(names), values)


def synth_series(components: list[tuple[float, float]], noise_sigma: float,
                 length: int, seed: int, n_columns: int = 1) -> SeriesTable:
    """Sum of sinusoids with seeded random phases plus Gaussian noise."""
    for period, _ in components:
        if period < 2:
            raise ValueError("sinusoid periods must be >= 2")
    rng = Rng(seed)
    t = np.arange(length, dtype=np.float64)
    values = {}
    for c in range(n_columns):
        col = np.zeros(length)
        for period, amplitude in components:
            phase = float(rng.uniform((), 0.0, 2 * np.pi))
            col += amplitude * np.sin(2 * np.pi * t / period + phase)
        if noise_sigma > 0:
            col += rng.normal((length,), noise_sigma)
        values[f"s{c}"] = col
    return SeriesTable(list(values), values)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        parts = (self.train, self.val, self.test)
        if any(p <= 0 for p in parts):
            raise ValueError("split ratios must be positive")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(parts)}")

    def boundaries(self, length: int) -> dict[str, tuple[int, int]]:
        n_train = int(length * self.train)
        n_val = int(length * self.val)
        return {"train": (0, n_train),
                "val": (n_train, n_train + n_val),
                "test": (n_train + n_val, length)}


@dataclass
class Window:
    context: np.ndarray
    horizon: np.ndarray
    column: str
    start: int


class WindowDataset:
    """Consecutive (context, horizon) slices of size C+H inside one split."""

    def __init__(self, name: str, context_len: int, horizon_len: int):
        self.name = name
        self.context_len = context_len
        self.horizon_len = horizon_len
        self._segments: list[np.ndarray] = []
        self._index: list[tuple[int, int, str, int]] = []

    def add_segment(self, column: str, series: np.ndarray, seg_start: int,
                    stride: int = 1) -> None:
        size = self.context_len + self.horizon_len
        n = len(series) - size + 1
        if n < 1:
            raise ValueError(
                f"split {self.name!r}: segment of column {column!r} has "
                f"{len(series)} steps, too short for one window of {size}")
        seg_id = len(self._segments)
        self._segments.append(np.asarray(series, dtype=np.float64))
        for start in range(0, n, stride):
            self._index.append((seg_id, start, column, seg_start + start))

    def __len__(self) -> int:
        return len(self._index)

    def window(self, i: int) -> Window:
        seg_id, start, column, global_start = self._index[i]
        series = self._segments[seg_id]
        c = self.context_len
        return Window(series[start:start + c],
                      series[start + c:start + c + self.horizon_len],
                      column, global_start)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        ctx = np.empty((len(idx), self.context_len))
        hor = np.empty((len(idx), self.horizon_len))
        for row, i in enumerate(idx):
            w = self.window(i)
            ctx[row] = w.context
            hor[row] = w.horizon
        return ctx, hor


def make_windows(table: SeriesTable, context_len: int, horizon_len: int,
                 stride: int = 1, split: SplitSpec | None = None
                 ) -> dict[str, WindowDataset]:
    """Per-column stride-1 sliding windows inside each split segment.

    ``split=None`` keeps the whole series as one segment named "all".
    """
    bounds = ({"all": (0, table.length)} if split is None
              else split.boundaries(table.length))
    out = {}
    for name, (lo, hi) in bounds.items():
        ds = WindowDataset(name, context_len, horizon_len)
        for column in table.columns:
            ds.add_segment(column, table.values[column][lo:hi], lo, stride)
        out[name] = ds
    return out


@dataclass
class Normalizer:
    """Per-column z-score with train-split statistics and a sigma floor."""

    means: dict[str, float]
    stds: dict[str, float]

    SIGMA_FLOOR = 1e-8

    @classmethod
    def fit(cls, table: SeriesTable, train_stop: int) -> "Normalizer":
        means, stds = {}, {}
        for column in table.columns:
            head = table.values[column][:train_stop]
            if len(head) == 0:
                raise ValueError("train split is empty")
            means[column] = float(head.mean())
            stds[column] = max(float(head.std()), cls.SIGMA_FLOOR)
        return cls(means, stds)

    def apply(self, table: SeriesTable) -> SeriesTable:
        values = {c: (table.values[c] - self.means[c]) / self.stds[c]
                  for c in table.columns}
        return SeriesTable(list(table.columns), values)

    def invert(self, table: SeriesTable) -> SeriesTable:
        values = {c: table.values[c] * self.stds[c] + self.means[c]
                  for c in table.columns}
        return SeriesTable(list(table.columns), values)


def acf_feature(window: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 1..max_lag; zero-variance gives zeros."""
    window = np.asarray(window, dtype=np.float64)
    n = len(window)
    if n <= max_lag:
        raise ValueError(f"window of {n} steps cannot support lag {max_lag}")
    centered = window - window.mean()
    denom = float(centered @ centered)
    if denom == 0.0:
        return np.zeros(max_lag)
    return np.array([float(centered[k:] @ centered[:-k]) / denom
                     for k in range(1, max_lag + 1)])
