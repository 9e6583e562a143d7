# src/metrics/overlap.py
from src.errors import InvariantError
from src.session.model import Segment


def iou_1d(a: Segment, b: Segment) -> float:
    """Intersection over union of two time intervals."""
    a_start, a_end = a
    b_start, b_end = b
    if not (a_end > a_start and b_end > b_start):
        raise InvariantError(f"iou_1d needs non-empty segments, got {a} and {b}")
    inter = max(0.0, min(a_end, b_end) - max(a_start, b_start))
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union
