# src/detector/nms.py
import numpy as np

from src.detector.anchors import pairwise_iou


def segment_order(segments: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices by score desc, then earlier start, then longer length, then index."""
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    lengths = segments[:, 1] - segments[:, 0]
    return np.lexsort((np.arange(scores.size), -lengths, segments[:, 0], -scores))


def nms_1d(
    segments: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float = 0.5,
    categories: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy suppression; returns kept indices in keep order.

    With *categories* given, suppression only happens inside a category.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = segment_order(segments, scores)
    if order.size == 0:
        return order.astype(np.int64)

    iou = pairwise_iou(segments, segments)
    if categories is not None:
        categories = np.asarray(categories).reshape(-1)
        iou = np.where(categories[:, None] == categories[None, :], iou, 0.0)

    suppressed = np.zeros(order.size, dtype=bool)
    keep = []
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(idx)
        suppressed |= iou[idx] >= iou_threshold
    return np.asarray(keep, dtype=np.int64)
