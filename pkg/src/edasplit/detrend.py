"""Theil-Sen robust linear detrending."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomposition import Decomposition
from .errors import NumericError
from .signals import Frame


@dataclass(frozen=True)
class LinearTrend:
    slope: float      # uS/s
    intercept: float  # uS at frame start

    def __post_init__(self):
        if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
            raise NumericError(f"non-finite trend ({self.slope}, {self.intercept})")

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        return self.slope * t + self.intercept


def pairwise_slopes(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """All (x_j - x_i) / (t_j - t_i) for i < j, as a flat array."""
    i, j = np.triu_indices(t.size, k=1)
    return (x[j] - x[i]) / (t[j] - t[i])


def theil_sen_fit(t: np.ndarray, x: np.ndarray) -> LinearTrend:
    """Exact Theil-Sen line through ``(t, x)``; ``t`` must be strictly increasing."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    slope = float(np.median(pairwise_slopes(t, x)))
    intercept = float(np.median(x - slope * t))
    return LinearTrend(slope, intercept)


def theil_sen(frame: Frame) -> LinearTrend:
    return theil_sen_fit(frame.times(), frame.samples)


def detrend_decompose(frame: Frame) -> Decomposition:
    """Straight-line tonic from Theil-Sen; phasic is the residue."""
    trend = theil_sen(frame)
    tonic = trend.evaluate(frame.times())
    return Decomposition(tonic, frame.samples - tonic, frame.index, "detrend")
