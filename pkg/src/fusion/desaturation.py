# src/fusion/desaturation.py
"""
Oxygen-desaturation scanning shared by score fusion and the ODI3 baseline.

The trace is median-smoothed, then a zig-zag scanner walks it: a peak is
confirmed once the trace falls at least ``reversal`` points below the running
maximum, and the following nadir once it climbs ``reversal`` points back.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from src.errors import InvariantError
from src.session.model import SpO2Trace

logger = logging.getLogger(__name__)

OD_THRESHOLD_PCT = 3.0
FUSION_REVERSAL_PCT = 0.5
ODI_REVERSAL_PCT = 1.0
RISE_SEARCH_S = 60.0


@dataclass(frozen=True, slots=True)
class Desaturation:
    peak_index: int
    peak: float
    nadir_index: int
    nadir: float

    @property
    def drop(self) -> float:
        return self.peak - self.nadir


@dataclass(frozen=True, slots=True)
class SpO2Features:
    p_d: float
    p_r: float
    empty_window: bool = False

    def __post_init__(self):
        if not (self.p_d >= 0 and self.p_r >= 0 and math.isfinite(self.p_d) and math.isfinite(self.p_r)):
            raise InvariantError(f"desaturation features must be finite and >= 0, got ({self.p_d}, {self.p_r})")


def smooth_trace(samples: np.ndarray, size: int = 3) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if size <= 1 or samples.size == 0:
        return samples.copy()
    return median_filter(samples, size=size, mode="nearest")


def scan_desaturations(values: np.ndarray, reversal: float) -> list[Desaturation]:
    """Peak -> nadir swings of *values*; a swing still open at the end is closed there."""
    if not reversal > 0:
        raise InvariantError(f"reversal must be > 0, got {reversal}")
    values = np.asarray(values, dtype=np.float64)
    swings: list[Desaturation] = []
    if values.size == 0:
        return swings

    falling = False
    hi = lo = 0
    for i in range(1, values.size):
        v = values[i]
        if not falling:
            if v > values[hi]:
                hi = i
            elif values[hi] - v >= reversal:
                falling, lo = True, i
        else:
            if v < values[lo]:
                lo = i
            elif v - values[lo] >= reversal:
                swings.append(Desaturation(hi, float(values[hi]), lo, float(values[lo])))
                falling, hi = False, i
    if falling:
        swings.append(Desaturation(hi, float(values[hi]), lo, float(values[lo])))
    return swings


def rise_after(values: np.ndarray, nadir_index: int, horizon: int, reversal: float) -> float:
    """Climb from the nadir to the next local maximum, looking at most *horizon* samples ahead."""
    nadir = values[nadir_index]
    best = nadir
    stop = min(values.size, nadir_index + horizon + 1)
    for v in values[nadir_index + 1 : stop]:
        if v > best:
            best = v
        elif best - v >= reversal:
            break
    return float(best - nadir)


def extract_od_features(
    trace: SpO2Trace,
    t_start: float,
    delta_t: float = 60.0,
    od_threshold: float = OD_THRESHOLD_PCT,
    reversal: float = FUSION_REVERSAL_PCT,
    smoothing: int = 3,
    rise_search_s: float = RISE_SEARCH_S,
    smoothed: np.ndarray | None = None,
) -> SpO2Features:
    """(p_d, p_r) of the first >= od_threshold desaturation in [t_start, t_start + delta_t].

    Without a qualifying drop, the largest drop in the window is used instead.
    Pass *smoothed* to reuse one smoothing pass across many detections.
    """
    if t_start < 0:
        raise InvariantError(f"t_start must be >= 0, got {t_start}")
    values = smooth_trace(trace.samples, smoothing) if smoothed is None else smoothed
    fs = trace.sample_rate
    first = int(math.floor(t_start * fs))
    last = min(values.size, first + int(round(delta_t * fs)) + 1)
    if first >= values.size or last - first < 1:
        logger.warning("SpO2 window at %.1f s lies beyond the %.1f s trace", t_start, trace.duration_s)
        return SpO2Features(0.0, 0.0, empty_window=True)

    swings = scan_desaturations(values[first:last], reversal)
    if not swings:
        return SpO2Features(0.0, 0.0)
    chosen = next((s for s in swings if s.drop >= od_threshold), None)
    if chosen is None:
        chosen = max(swings, key=lambda s: s.drop)
    horizon = int(round(rise_search_s * fs))
    p_r = rise_after(values, first + chosen.nadir_index, horizon, reversal)
    return SpO2Features(float(chosen.drop), p_r)
