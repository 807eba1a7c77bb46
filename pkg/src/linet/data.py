"""CSV ingestion, chronological splits, z-score normalization and windowing.

Input files follow the common long-horizon benchmark layout: a header row,
a ``date`` column, then one numeric column per channel.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

from .embedding import PrecomputedEmbeddings, calendar_features, TimestampError
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def _to_datetime(text: str) -> datetime:
    # calendar_features has already validated the field ranges
    date, _, clock = text.strip().replace("T", " ").partition(" ")
    y, m, d = (int(v) for v in date.split("-"))
    parts = [float(v) for v in clock.split(":")] if clock else []
    parts += [0.0] * (3 - len(parts))
    return datetime(y, m, d) + timedelta(hours=parts[0], minutes=parts[1], seconds=parts[2])


@dataclass
class RawSeries:
    timestamps: list[str]
    values: np.ndarray  # [channels, steps]
    channels: list[str]
    calendar: np.ndarray  # [steps, 4] zero-based calendar indices
    step: timedelta | None = None
    item_ids: np.ndarray | None = None
    store_id: int = 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.timestamps):
            raise DataError(f"values shape {self.values.shape} does not match {len(self.timestamps)} timestamps")
        if self.item_ids is None:
            self.item_ids = np.arange(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]

    def view(self, start: int, stop: int) -> "RawSeries":
        return RawSeries(self.timestamps[start:stop], self.values[:, start:stop], self.channels,
                         self.calendar[start:stop], self.step, self.item_ids, self.store_id)

    def future_timestamps(self, count: int) -> list[str]:
        if self.step is None:
            raise DataError("cannot extrapolate timestamps without a uniform step")
        last = _to_datetime(self.timestamps[-1])
        return [(last + self.step * (i + 1)).strftime("%Y-%m-%d %H:%M:%S") for i in range(count)]


def calendar_matrix(timestamps: list[str]) -> np.ndarray:
    return np.array([calendar_features(t).indices() for t in timestamps], dtype=np.int64).reshape(-1, 4)


def load_csv(path: str | Path, item_ids: list[int] | None = None) -> RawSeries:
    """Read a wide CSV: ``date`` then one numeric column per channel.

    Missing cells are rejected; timestamps must be strictly increasing with
    a uniform step. Errors name the offending file line.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip().lower() != "date":
            raise DataError(f"{path}:1: header must start with a 'date' column")
        channels = [h.strip() for h in header[1:]]
        if not channels:
            raise DataError(f"{path}:1: no channel columns")
        stamps: list[str] = []
        rows: list[list[float]] = []
        cal: list[tuple[int, int, int, int]] = []
        prev: datetime | None = None
        step: timedelta | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                feats = calendar_features(row[0])
            except TimestampError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            when = _to_datetime(row[0])
            if prev is not None:
                delta = when - prev
                if delta <= timedelta(0):
                    raise DataError(f"{path}:{lineno}: timestamp {row[0]!r} is not after the previous row")
                if step is None:
                    step = delta
                elif delta != step:
                    raise DataError(f"{path}:{lineno}: irregular step {delta} (expected {step})")
            prev = when
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                bad = next(c for c in row[1:] if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: missing or non-finite value")
            stamps.append(row[0].strip())
            rows.append(vals)
            cal.append(feats.indices())
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64).T.copy()
    ids = np.asarray(item_ids) if item_ids is not None else None
    return RawSeries(stamps, values, channels, np.asarray(cal, dtype=np.int64), step, ids)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def save_csv(series: RawSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *series.channels])
        for i, ts in enumerate(series.timestamps):
            w.writerow([ts, *(repr(float(v)) for v in series.values[:, i])])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise ConfigError("split fractions must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")

    def lengths(self, total: int) -> tuple[int, int, int]:
        n_train = math.floor(round(self.train * total, 9))
        n_val = math.floor(round(self.val * total, 9))
        return n_train, n_val, total - n_train - n_val


def chronological_split(series: RawSeries, spec: SplitSpec = SplitSpec(), lookback: int | None = None,
                        horizon: int | None = None) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Contiguous train/val/test slices in time order."""
    total = len(series)
    if lookback is not None and horizon is not None:
        need = 3 * (lookback + horizon)
        if total < need:
            raise ConfigError(f"series of length {total} is too short; need at least {need} "
                              f"steps for lookback {lookback} and horizon {horizon}")
    n_train, n_val, _ = spec.lengths(total)
    return (series.view(0, n_train), series.view(n_train, n_train + n_val),
            series.view(n_train + n_val, total))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: RawSeries) -> "Normalizer":
        if len(train) == 0:
            raise DataError("cannot fit a normalizer on an empty slice")
        mean = train.values.mean(axis=1)
        std = train.values.std(axis=1)  # population
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]

    def invert_forecast(self, forecast: np.ndarray) -> np.ndarray:
        """Undo the transform on [..., C, P] arrays."""
        return forecast * self.std[:, None] + self.mean[:, None]


fit_normalizer = Normalizer.fit


def make_windows(length: int, lookback: int, horizon: int, stride: int = 1) -> np.ndarray:
    """Start offsets of every window [i, i+T) -> [i+T, i+T+P) inside a slice."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    count = length - lookback - horizon + 1
    if count <= 0:
        warnings.warn(f"slice of length {length} holds no window of {lookback}+{horizon} steps",
                      stacklevel=2)
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, count, stride, dtype=np.int64)


@dataclass
class WindowBatch:
    x: np.ndarray  # [B, C, T]
    y: np.ndarray | None  # [B, C, P]; None when forecasting past the data
    hist_calendar: np.ndarray  # [B, T, 4]
    fut_calendar: np.ndarray  # [B, P, 4]
    store_ids: np.ndarray  # [B]
    item_ids: np.ndarray  # [C]
    hist_date_vec: np.ndarray | None = None  # [B, T, D] precomputed, overrides tables
    fut_date_vec: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.x.shape[0]


@dataclass
class WindowSet:
    """Windows over one normalized slice; batches are gathered on demand."""

    values: np.ndarray  # [C, steps], normalized
    calendar: np.ndarray
    starts: np.ndarray
    lookback: int
    horizon: int
    item_ids: np.ndarray
    store_id: int = 0
    timestamps: list[str] = field(default_factory=list)
    vectors: PrecomputedEmbeddings | None = None

    def __len__(self) -> int:
        return len(self.starts)

    def batch(self, which) -> WindowBatch:
        starts = self.starts[np.asarray(which)]
        t_idx = starts[:, None] + np.arange(self.lookback)
        p_idx = starts[:, None] + self.lookback + np.arange(self.horizon)
        x = np.transpose(self.values[:, t_idx], (1, 0, 2))
        y = np.transpose(self.values[:, p_idx], (1, 0, 2))
        hist_vec = fut_vec = None
        if self.vectors is not None:
            ts = np.asarray(self.timestamps)
            hist_vec = np.stack([self.vectors.lookup(ts[row]) for row in t_idx])
            fut_vec = np.stack([self.vectors.lookup(ts[row]) for row in p_idx])
        return WindowBatch(
            x=np.ascontiguousarray(x), y=np.ascontiguousarray(y),
            hist_calendar=self.calendar[t_idx], fut_calendar=self.calendar[p_idx],
            store_ids=np.full(len(starts), self.store_id, dtype=np.int64),
            item_ids=self.item_ids, hist_date_vec=hist_vec, fut_date_vec=fut_vec,
        )

    def batches(self, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[WindowBatch]:
        order = np.arange(len(self))
        if rng is not None:
            order = rng.permutation(len(self))
        for lo in range(0, len(order), batch_size):
            yield self.batch(order[lo:lo + batch_size])


def window_set(view: RawSeries, norm: Normalizer, lookback: int, horizon: int, stride: int = 1,
               vectors: PrecomputedEmbeddings | None = None) -> WindowSet:
    return WindowSet(norm.apply(view.values), view.calendar,
                     make_windows(len(view), lookback, horizon, stride), lookback, horizon,
                     np.asarray(view.item_ids), view.store_id, view.timestamps, vectors)


def latest_window(series: RawSeries, norm: Normalizer, lookback: int, horizon: int,
                  vectors: PrecomputedEmbeddings | None = None) -> WindowBatch:
    """The final ``lookback`` steps as a one-window batch, with calendar rows for the unseen horizon."""
    if len(series) < lookback:
        raise ConfigError(f"series of length {len(series)} is shorter than lookback {lookback}")
    future = series.future_timestamps(horizon)
    hist_stamps = series.timestamps[-lookback:]
    hist_vec = fut_vec = None
    if vectors is not None:
        hist_vec, fut_vec = vectors.lookup(hist_stamps)[None], vectors.lookup(future)[None]
    return WindowBatch(
        x=norm.apply(series.values[:, -lookback:])[None], y=None,
        hist_calendar=series.calendar[-lookback:][None], fut_calendar=calendar_matrix(future)[None],
        store_ids=np.array([series.store_id], dtype=np.int64), item_ids=np.asarray(series.item_ids),
        hist_date_vec=hist_vec, fut_date_vec=fut_vec,
    )


@dataclass
class PreparedData:
    series: RawSeries
    normalizer: Normalizer
    train: WindowSet
    val: WindowSet
    test: WindowSet


def prepare(series: RawSeries, lookback: int, horizon: int, stride: int = 1, eval_stride: int | None = None,
            split: SplitSpec = SplitSpec(), vectors: PrecomputedEmbeddings | None = None) -> PreparedData:
    """Split, fit the normalizer on train only, and window every slice."""
    train, val, test = chronological_split(series, split, lookback, horizon)
    norm = Normalizer.fit(train)
    ev = stride if eval_stride is None else eval_stride
    sets = (window_set(train, norm, lookback, horizon, stride, vectors),
            window_set(val, norm, lookback, horizon, ev, vectors),
            window_set(test, norm, lookback, horizon, ev, vectors))
    if len(sets[0]) == 0:
        raise ConfigError("training split yields zero windows")
    return PreparedData(series, norm, *sets)


def stride_for_budget(train_len: int, lookback: int, horizon: int, max_windows: int) -> int:
    """Smallest stride keeping the number of training windows <= max_windows."""
    count = train_len - lookback - horizon + 1
    if count <= max_windows:
        return 1
    return math.ceil(count / max_windows)


def synthetic_series(n_steps: int = 400, n_channels: int = 3, seed: int = 0, period: int = 24,
                     trend: float = 0.01, noise: float = 0.05, start: str = "2016-07-01 00:00:00",
                     step_hours: float = 1.0) -> RawSeries:
    """Sinusoid-plus-trend channels with distinct phases, hourly timestamps."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps)
    phases = rng.uniform(0, 2 * np.pi, size=n_channels)
    amps = rng.uniform(0.5, 1.5, size=n_channels)
    slopes = trend * rng.uniform(0.5, 1.5, size=n_channels)
    values = (amps[:, None] * np.sin(2 * np.pi * t[None, :] / period + phases[:, None])
              + slopes[:, None] * t[None, :]
              + noise * rng.standard_normal((n_channels, n_steps)))
    base = _to_datetime(start)
    step = timedelta(hours=step_hours)
    stamps = [(base + step * i).strftime("%Y-%m-%d %H:%M:%S") for i in range(n_steps)]
    return RawSeries(stamps, values, [f"ch{i}" for i in range(n_channels)], calendar_matrix(stamps), step)
