# src/metrics/agreement.py
"""Agreement statistics between estimated and reference AHI."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from src.errors import DataError, InvariantError

IccVariant = Literal["2,1", "3,1", "1,1"]
DIAGNOSTIC_THRESHOLDS = (5.0, 15.0, 30.0)
LOA_Z = 1.96


def compute_ahi(events: Sequence, tst: float) -> float:
    """Events per hour of total sleep time; every event category counts."""
    if not tst > 0:
        raise InvariantError(f"total sleep time must be > 0 h, got {tst}")
    return len(events) / tst


def _as_pairs(pairs) -> np.ndarray:
    array = np.asarray(pairs, dtype=np.float64)
    if array.size == 0:
        return array.reshape(0, 2)
    if array.ndim != 2 or array.shape[1] != 2:
        raise DataError(f"expected (reference, estimate) pairs, got shape {array.shape}")
    return array


def icc(pairs, variant: IccVariant = "2,1") -> float | None:
    """Single-measure ICC from two-way ANOVA mean squares; None when undefined.

    "2,1": two-way random effects, absolute agreement.
    "3,1": two-way mixed effects, consistency.
    "1,1": one-way random effects.
    """
    y = _as_pairs(pairs)
    n, k = y.shape
    if n < 2:
        return None
    grand = y.mean()
    ss_rows = k * np.sum((y.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((y.mean(axis=0) - grand) ** 2)
    ss_total = np.sum((y - grand) ** 2)
    ss_error = max(ss_total - ss_rows - ss_cols, 0.0)
    if ss_rows == 0:
        return None

    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_error = ss_error / ((n - 1) * (k - 1))
    if variant == "2,1":
        numerator = ms_rows - ms_error
        denominator = ms_rows + (k - 1) * ms_error + k * (ms_cols - ms_error) / n
    elif variant == "3,1":
        numerator = ms_rows - ms_error
        denominator = ms_rows + (k - 1) * ms_error
    elif variant == "1,1":
        ms_within = (ss_cols + ss_error) / (n * (k - 1))
        numerator = ms_rows - ms_within
        denominator = ms_rows + (k - 1) * ms_within
    else:
        raise ValueError(f"unknown ICC variant {variant!r}")
    if denominator <= 0:
        return None
    return float(numerator / denominator)


@dataclass(frozen=True, slots=True)
class DiagnosticMetrics:
    threshold: float
    sensitivity: float | None
    specificity: float | None
    accuracy: float
    kappa: float | None
    tp: int
    tn: int
    fp: int
    fn: int

    def as_dict(self) -> dict:
        return asdict(self)


def diagnostic_metrics(pairs, threshold: float) -> DiagnosticMetrics:
    """Binarise reference and estimate at AHI >= threshold and compare."""
    y = _as_pairs(pairs)
    if y.shape[0] == 0:
        raise DataError("diagnostic metrics need at least one subject")
    truth = y[:, 0] >= threshold
    estimate = y[:, 1] >= threshold
    tp = int(np.sum(truth & estimate))
    tn = int(np.sum(~truth & ~estimate))
    fp = int(np.sum(~truth & estimate))
    fn = int(np.sum(truth & ~estimate))
    n = y.shape[0]

    p_observed = (tp + tn) / n
    p_chance = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    if p_chance < 1.0:
        kappa = (p_observed - p_chance) / (1.0 - p_chance)
    else:
        # both ratings use a single class: agreement is total or kappa is undefined
        kappa = 1.0 if p_observed == 1.0 else None
    return DiagnosticMetrics(
        threshold=float(threshold),
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
        accuracy=p_observed,
        kappa=kappa,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


@dataclass(frozen=True, slots=True)
class BlandAltman:
    bias: float
    sd: float
    loa_lower: float
    loa_upper: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def bland_altman(pairs) -> BlandAltman:
    """Differences estimate - reference: bias and bias +/- 1.96 sample sd."""
    y = _as_pairs(pairs)
    if y.shape[0] < 2:
        raise DataError(f"Bland-Altman needs at least 2 pairs, got {y.shape[0]}")
    diffs = y[:, 1] - y[:, 0]
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(bias, sd, bias - LOA_Z * sd, bias + LOA_Z * sd, int(y.shape[0]))
