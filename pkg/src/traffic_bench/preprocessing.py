"""Per-series preprocessing: zero-fill, split, train-fit MinMax scaling, windowing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import MetricSeries

MIN_SERIES_LENGTH = 20


class TooShortSeriesError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    train_window: int
    pred_window: int

    def __post_init__(self):
        if self.train_window <= 0 or self.pred_window <= 0:
            raise ValueError("window sizes must be positive")

    @classmethod
    def parse(cls, text: str) -> "WindowConfig":
        """Parse ``"168/24"`` or ``"168x24"``."""
        for sep in ("/", "x"):
            if sep in text:
                w, h = text.split(sep, 1)
                return cls(int(w), int(h))
        raise ValueError(f"cannot parse window config {text!r}")

    def __str__(self) -> str:
        return f"{self.train_window}/{self.pred_window}"


BENCHMARK_WINDOWS: tuple[WindowConfig, ...] = (
    WindowConfig(24, 1),
    WindowConfig(168, 1),
    WindowConfig(168, 24),
    WindowConfig(744, 1),
    WindowConfig(744, 168),
)


@dataclass(frozen=True)
class SplitIndices:
    train_end: int
    val_end: int
    total: int

    def partitions(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return values[: self.train_end], values[self.train_end : self.val_end], values[self.val_end :]


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    @property
    def degenerate(self) -> bool:
        return not self.max > self.min


def fill_missing_zero(series: MetricSeries) -> MetricSeries:
    values = np.where(np.isnan(series.values), 0.0, series.values)
    return series.with_values(values)


def split_series(total: int) -> SplitIndices:
    """35/5/60 split by count, flooring the cumulative proportions."""
    if total < MIN_SERIES_LENGTH:
        raise TooShortSeriesError(f"series of length {total} is shorter than {MIN_SERIES_LENGTH}")
    # integer arithmetic avoids 0.35 * n landing just below an integer
    return SplitIndices(total * 35 // 100, total * 40 // 100, total)


def fit_scaler(train_values: Sequence[float]) -> ScalerParams:
    arr = np.asarray(train_values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot fit a scaler on an empty train slice")
    return ScalerParams(float(arr.min()), float(arr.max()))


def transform(params: ScalerParams, x):
    """Map by the train extrema; no clipping. A degenerate scaler maps to 0."""
    x = np.asarray(x, dtype=np.float64)
    if params.degenerate:
        return np.zeros_like(x)
    return (x - params.min) / (params.max - params.min)


def inverse_transform(params: ScalerParams, z):
    z = np.asarray(z, dtype=np.float64)
    if params.degenerate:
        return np.full_like(z, params.min)
    return z * (params.max - params.min) + params.min


def window_count(n: int, cfg: WindowConfig) -> int:
    return max(0, (n - cfg.train_window) // cfg.pred_window)


def make_windows(values: Sequence[float], cfg: WindowConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding windows shifted by the prediction window.

    Returns ``(inputs, targets, origins)`` with shapes ``(n, W)``, ``(n, H)``
    and ``(n,)``.  Window ``k`` starts at ``k * H``; a window is emitted only
    when its full target fits inside ``values``.
    """
    arr = np.asarray(values, dtype=np.float64)
    w, h = cfg.train_window, cfg.pred_window
    n = window_count(len(arr), cfg)
    origins = np.arange(n, dtype=np.int64) * h
    idx = origins[:, None] + np.arange(w + h)[None, :]
    block = arr[idx] if len(origins) else np.empty((0, w + h))
    return block[:, :w].copy(), block[:, w:].copy(), origins


def windows_as_list(values: Sequence[float], cfg: WindowConfig) -> list[tuple[np.ndarray, np.ndarray, int]]:
    inputs, targets, origins = make_windows(values, cfg)
    return [(inputs[i], targets[i], int(origins[i])) for i in range(len(origins))]


@dataclass
class PreparedSeries:
    """Scaled partitions and their windows for one series and config."""

    split: SplitIndices
    scaler: ScalerParams
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    cfg: WindowConfig

    def windows(self, part: str):
        return make_windows(getattr(self, part), self.cfg)


def prepare(series: MetricSeries, cfg: WindowConfig) -> PreparedSeries:
    filled = fill_missing_zero(series).values
    split = split_series(len(filled))
    train, val, test = split.partitions(filled)
    scaler = fit_scaler(train)
    return PreparedSeries(
        split,
        scaler,
        transform(scaler, train),
        transform(scaler, val),
        transform(scaler, test),
        cfg,
    )
