# src/fusion/grid_search.py
"""
Exhaustive (T1, T2) search maximising ICC between estimated and true AHI.

Desaturation features do not depend on the thresholds, so they are computed
once per detection and only the cheap rescoring runs per grid pair.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field

from src.errors import DataError, NumericError
from src.fusion.desaturation import SpO2Features
from src.fusion.fusion import FusionParams, fuse_with_features, session_features
from src.metrics.agreement import IccVariant, compute_ahi, icc
from src.session.model import DetectedSegment, SpO2Trace

logger = logging.getLogger(__name__)


def default_t1_grid() -> list[float]:
    return [float(v) for v in np.round(np.arange(2.0, 8.0 + 1e-9, 0.5), 6)]


def default_t2_grid() -> list[float]:
    return [float(v) for v in np.round(np.arange(0.5, 4.0 + 1e-9, 0.5), 6)]


@dataclass(frozen=True, slots=True)
class GridSession:
    id: str
    true_ahi: float
    tst: float
    detections: tuple[DetectedSegment, ...]
    features: tuple[SpO2Features, ...]

    @classmethod
    def build(
        cls,
        session_id: str,
        true_ahi: float,
        tst: float,
        detections: Sequence[DetectedSegment],
        trace: SpO2Trace,
        params: FusionParams,
    ) -> GridSession:
        return cls(session_id, true_ahi, tst, tuple(detections), tuple(session_features(detections, trace, params)))

    def estimated_ahi(self, params: FusionParams) -> float:
        fused = fuse_with_features(self.detections, self.features, params)
        return compute_ahi([f for f in fused if f.counted], self.tst)


@dataclass(slots=True)
class GridResult:
    params: FusionParams
    icc: float
    table: list[dict] = field(default_factory=list)


def _evaluate_pair(sessions, base: FusionParams, t1: float, t2: float, variant: IccVariant) -> float | None:
    params = base.model_copy(update={"t1": t1, "t2": t2})
    pairs = [(s.true_ahi, s.estimated_ahi(params)) for s in sessions]
    return icc(pairs, variant)


def grid_search_thresholds(
    sessions: Sequence[GridSession],
    base: FusionParams | None = None,
    t1_grid: Sequence[float] | None = None,
    t2_grid: Sequence[float] | None = None,
    icc_variant: IccVariant = "2,1",
    workers: int = 1,
) -> GridResult:
    """Best (T1, T2); ties go to the smaller T1, then the smaller T2."""
    base = base or FusionParams()
    t1_values = sorted(default_t1_grid() if t1_grid is None else t1_grid)
    t2_values = sorted(default_t2_grid() if t2_grid is None else t2_grid)
    if len(sessions) < 2:
        raise DataError(f"threshold search needs at least 2 sessions, got {len(sessions)}")
    if len({s.true_ahi for s in sessions}) < 2:
        raise DataError("threshold search needs sessions with distinct true AHI (ICC undefined otherwise)")
    if not all(np.isfinite(t1_values)) or not all(np.isfinite(t2_values)):
        raise DataError("threshold grids must be finite")

    pairs = [(t1, t2) for t1 in t1_values for t2 in t2_values if t2 < t1]
    if not pairs:
        raise DataError("no feasible (T1, T2) pair: every T2 is >= every T1")

    def _job(pair):
        return _evaluate_pair(sessions, base, pair[0], pair[1], icc_variant)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_job, pairs))
    else:
        scores = [_job(p) for p in pairs]

    table = [{"t1": t1, "t2": t2, "icc": score} for (t1, t2), score in zip(pairs, scores)]
    best_index = None
    for i, score in enumerate(scores):
        if score is not None and (best_index is None or score > scores[best_index]):
            best_index = i
    if best_index is None:
        raise NumericError("ICC is undefined for every (T1, T2) pair")

    t1, t2 = pairs[best_index]
    logger.info("Best thresholds T1=%.2f T2=%.2f (ICC %.4f over %d sessions)", t1, t2, scores[best_index], len(sessions))
    return GridResult(base.model_copy(update={"t1": t1, "t2": t2}), float(scores[best_index]), table)


def cross_validated_search(
    sessions: Sequence[GridSession],
    fold_of: Mapping[str, int],
    base: FusionParams | None = None,
    t1_grid: Sequence[float] | None = None,
    t2_grid: Sequence[float] | None = None,
    icc_variant: IccVariant = "2,1",
    workers: int = 1,
) -> dict[int, GridResult]:
    """Per held-out fold: thresholds searched on the sessions of the other folds."""
    results = {}
    for fold in sorted(set(fold_of.values())):
        training = [s for s in sessions if fold_of[s.id] != fold]
        results[fold] = grid_search_thresholds(training, base, t1_grid, t2_grid, icc_variant, workers)
    return results


class ThresholdSelection(BaseModel):
    """thresholds.json: pooled (T1, T2) plus one pair per held-out fold."""

    icc_variant: str = "2,1"
    pooled: FusionParams
    pooled_icc: float
    folds: dict[str, FusionParams] = Field(default_factory=dict)
    fold_icc: dict[str, float] = Field(default_factory=dict)

    def params_for(self, model_name: str | None) -> FusionParams:
        """Thresholds searched without the sessions *model_name* was held out on."""
        if model_name is None:
            return self.pooled
        return self.folds.get(model_name, self.pooled)
