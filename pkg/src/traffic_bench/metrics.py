"""Forecast scores: RMSE, epsilon-guarded R², Harmonic-Score and Pearson r."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-12


class ScoreInputError(ValueError):
    pass


class ZeroVarianceError(ScoreInputError):
    pass


@dataclass(frozen=True)
class ClipThresholds:
    rmse_max: float = 11.0
    r2_min: float = -10.0

    def __post_init__(self):
        if not self.rmse_max > 0 or not self.r2_min < 1:
            raise ValueError("need rmse_max > 0 and r2_min < 1")


@dataclass(frozen=True)
class ScorePair:
    rmse: float
    r2: float


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.size != p.size:
        raise ScoreInputError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ScoreInputError("empty input")
    return a, p


def rmse(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def r2_score(actual, predicted, epsilon: float = DEFAULT_EPSILON) -> float:
    """``1 - SSres / (SStot + epsilon)``; exactly 1 when SSres is 0."""
    if not epsilon > 0:
        raise ScoreInputError("epsilon must be positive")
    a, p = _pair(actual, predicted)
    ss_res = float(np.sum((a - p) ** 2))
    if ss_res == 0.0:
        return 1.0
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    return 1.0 - ss_res / (ss_tot + epsilon)


def harmonic_score(pair: ScorePair, clips: ClipThresholds = ClipThresholds()) -> float:
    """Harmonic mean of clipped RMSE and clipped ``|R² - 1|``; lower is better."""
    r = min(pair.rmse, clips.rmse_max)
    d = abs(max(pair.r2, clips.r2_min) - 1.0)
    if r + d == 0:
        return 0.0
    return 2.0 * r * d / (r + d)


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ScoreInputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ScoreInputError("pearson needs at least two points")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise ZeroVarianceError("pearson correlation undefined for zero-variance input")
    da, db = a - a.mean(), b - b.mean()
    r = float(np.sum(da * db)) / np.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    return float(min(1.0, max(-1.0, r)))


def score(actual, predicted, epsilon: float = DEFAULT_EPSILON,
          clips: ClipThresholds = ClipThresholds()) -> tuple[float, float, float]:
    """Return ``(rmse, r2, harmonic)`` for one pooled prediction sequence."""
    pair = ScorePair(rmse(actual, predicted), r2_score(actual, predicted, epsilon))
    return pair.rmse, pair.r2, harmonic_score(pair, clips)
