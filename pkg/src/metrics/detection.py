# src/metrics/detection.py
"""
Average precision for 1D segment detection.

Detections are ranked by score (earlier start first on ties) and matched
greedily, each to the unmatched ground-truth segment it overlaps most with
IoU >= threshold. AP is the area under the all-point interpolated
precision/recall curve.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from src.metrics.overlap import iou_1d
from src.session.model import EVENT_CATEGORIES, DetectedSegment, EventAnnotation, EventCategory


def rank_detections(detections: Sequence[DetectedSegment]) -> list[DetectedSegment]:
    return sorted(detections, key=lambda d: (-d.score, d.t_start))


def match_detections(
    detections: Sequence[DetectedSegment],
    ground_truth: Sequence[EventAnnotation],
    iou_threshold: float = 0.5,
) -> list[bool]:
    """True-positive flags for detections in ranked order."""
    matched = [False] * len(ground_truth)
    flags = []
    for det in rank_detections(detections):
        best, best_iou = -1, iou_threshold
        for j, gt in enumerate(ground_truth):
            if matched[j]:
                continue
            overlap = iou_1d(det.span, gt.span)
            if overlap >= best_iou and (best < 0 or overlap > best_iou):
                best, best_iou = j, overlap
        if best >= 0:
            matched[best] = True
        flags.append(best >= 0)
    return flags


def ap_from_flags(flags: Sequence[bool], n_ground_truth: int) -> float | None:
    if n_ground_truth == 0:
        return None
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, tp.size + 1, dtype=np.float64)
    recall = np.concatenate([[0.0], tp / n_ground_truth, [1.0]])
    precision = np.concatenate([[0.0], tp / ranks, [0.0]])
    # precision envelope: best precision at any recall at or beyond this point
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def _ap_single(detections, ground_truth, iou_threshold) -> float | None:
    return ap_from_flags(match_detections(detections, ground_truth, iou_threshold), len(ground_truth))


def average_precision(
    detections: Sequence[DetectedSegment],
    ground_truth: Sequence[EventAnnotation],
    iou_threshold: float = 0.5,
    class_agnostic: bool = True,
) -> float | None:
    """AP over one detection list. None when there is no ground truth to find.

    Class-aware mode averages per-category AP over the categories present in
    the ground truth.
    """
    if class_agnostic:
        return _ap_single(detections, ground_truth, iou_threshold)
    per_class = per_category_ap(detections, ground_truth, iou_threshold)
    present = [v for v in per_class.values() if v is not None]
    return float(np.mean(present)) if present else None


def per_category_ap(
    detections: Sequence[DetectedSegment],
    ground_truth: Sequence[EventAnnotation],
    iou_threshold: float = 0.5,
) -> dict[EventCategory, float | None]:
    return {
        category: _ap_single(
            [d for d in detections if d.category is category],
            [g for g in ground_truth if g.category is category],
            iou_threshold,
        )
        for category in EVENT_CATEGORIES
    }


def pooled_flags(
    per_session: Sequence[tuple[Sequence[DetectedSegment], Sequence[EventAnnotation]]],
    iou_threshold: float = 0.5,
    category: EventCategory | None = None,
) -> tuple[list[float], list[bool], int]:
    """Scores and TP flags of every detection across sessions, plus the gt count."""
    scores: list[float] = []
    flags: list[bool] = []
    n_gt = 0
    for detections, ground_truth in per_session:
        if category is not None:
            detections = [d for d in detections if d.category is category]
            ground_truth = [g for g in ground_truth if g.category is category]
        ranked = rank_detections(detections)
        flags.extend(match_detections(ranked, ground_truth, iou_threshold))
        scores.extend(d.score for d in ranked)
        n_gt += len(ground_truth)
    return scores, flags, n_gt


def pooled_average_precision(
    per_session: Sequence[tuple[Sequence[DetectedSegment], Sequence[EventAnnotation]]],
    iou_threshold: float = 0.5,
    class_agnostic: bool = True,
) -> float | None:
    """One PR curve over the whole cohort; matching never crosses sessions."""

    def _pooled(category):
        scores, flags, n_gt = pooled_flags(per_session, iou_threshold, category)
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        return ap_from_flags([flags[i] for i in order], n_gt)

    if class_agnostic:
        return _pooled(None)
    present = [v for v in (_pooled(c) for c in EVENT_CATEGORIES) if v is not None]
    return float(np.mean(present)) if present else None
