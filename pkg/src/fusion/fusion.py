# src/fusion/fusion.py
"""
Radar/SpO2 score fusion.

    p' = alpha * p + (1 - alpha)   if p_d >= T1 or p_r >= T1
    p' = beta * p                  if p_d <  T2 and p_r < T2
    p' = p                         otherwise
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from pydantic import BaseModel, Field, model_validator

from src.fusion.desaturation import (
    FUSION_REVERSAL_PCT,
    OD_THRESHOLD_PCT,
    RISE_SEARCH_S,
    SpO2Features,
    extract_od_features,
    smooth_trace,
)
from src.session.model import DetectedSegment, SpO2Trace


class FusionParams(BaseModel):
    alpha: float = Field(default=0.5, ge=0, le=1)
    beta: float = Field(default=0.6, ge=0, le=1)
    t1: float = 4.0
    t2: float = 2.0
    delta_t: float = Field(default=60.0, gt=0)
    decision_threshold: float = Field(default=0.5, ge=0, le=1)
    smoothing: int = Field(default=3, ge=1)
    od_threshold: float = Field(default=OD_THRESHOLD_PCT, gt=0)
    reversal: float = Field(default=FUSION_REVERSAL_PCT, gt=0)
    rise_search_s: float = Field(default=RISE_SEARCH_S, ge=0)

    @model_validator(mode="after")
    def _ordered_thresholds(self):
        if not self.t2 < self.t1:
            raise ValueError(f"t2 must be below t1, got t1={self.t1}, t2={self.t2}")
        return self


@dataclass(frozen=True, slots=True)
class FusedDetection:
    detection: DetectedSegment  # score already replaced by p'
    radar_score: float
    features: SpO2Features
    counted: bool


def fuse_score(p: float, features: SpO2Features, params: FusionParams) -> float:
    if features.p_d >= params.t1 or features.p_r >= params.t1:
        return params.alpha * p + (1.0 - params.alpha)
    if features.p_d < params.t2 and features.p_r < params.t2:
        return params.beta * p
    return p


def session_features(
    detections: Sequence[DetectedSegment], trace: SpO2Trace, params: FusionParams
) -> list[SpO2Features]:
    """SpO2 features per detection; they do not depend on T1/T2, so grid search caches them."""
    smoothed = smooth_trace(trace.samples, params.smoothing)
    return [
        extract_od_features(
            trace,
            d.t_start,
            delta_t=params.delta_t,
            od_threshold=params.od_threshold,
            reversal=params.reversal,
            smoothing=params.smoothing,
            rise_search_s=params.rise_search_s,
            smoothed=smoothed,
        )
        for d in detections
    ]


def fuse_with_features(
    detections: Sequence[DetectedSegment], features: Sequence[SpO2Features], params: FusionParams
) -> list[FusedDetection]:
    fused = []
    for detection, feats in zip(detections, features, strict=True):
        score = min(max(fuse_score(detection.score, feats, params), 0.0), 1.0)
        fused.append(
            FusedDetection(
                detection=detection.with_score(score),
                radar_score=detection.score,
                features=feats,
                counted=score >= params.decision_threshold,
            )
        )
    return fused


def fuse_session(
    detections: Sequence[DetectedSegment], trace: SpO2Trace, params: FusionParams | None = None
) -> list[FusedDetection]:
    """Rescore every detection; all are kept, ``counted`` marks those at/above the decision threshold."""
    params = params or FusionParams()
    if not detections:
        return []
    return fuse_with_features(detections, session_features(detections, trace, params), params)


def counted_detections(fused: Sequence[FusedDetection]) -> list[DetectedSegment]:
    return [f.detection for f in fused if f.counted]
