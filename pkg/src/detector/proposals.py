# src/detector/proposals.py
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from src.detector.anchors import AnchorTable, decode_tensor
from src.detector.nms import nms_1d, segment_order
from src.errors import InvariantError

MIN_PROPOSAL_FRAMES = 1.0


@dataclass(frozen=True, slots=True)
class Proposal:
    """Segment of interest in input frames."""

    t_start: float
    t_end: float
    objectness: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise InvariantError(f"proposal needs t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if not (0.0 <= self.objectness <= 1.0 and math.isfinite(self.objectness)):
            raise InvariantError(f"objectness must be in [0, 1], got {self.objectness}")


def propose(
    logits: torch.Tensor,
    deltas: torch.Tensor,
    anchors: AnchorTable,
    n_frames: int,
    top_k: int,
    nms_iou: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Decode one image's SPN output into (P, 2) segments and (P,) objectness.

    Segments are clipped to [0, n_frames], the top_k by objectness survive and
    are thinned by NMS. Output follows keep order (score, then earlier start).
    """
    with torch.no_grad():
        objectness = torch.sigmoid(logits.detach().double()).cpu().numpy()
        centers = torch.from_numpy(anchors.centers)
        lengths = torch.from_numpy(anchors.lengths)
        segments = decode_tensor(deltas.detach().double().cpu(), centers, lengths).numpy()
    segments = np.clip(segments, 0.0, float(n_frames))

    candidates = np.flatnonzero(segments[:, 1] - segments[:, 0] >= MIN_PROPOSAL_FRAMES)
    ranked = candidates[segment_order(segments[candidates], objectness[candidates])[:top_k]]
    kept = ranked[nms_1d(segments[ranked], objectness[ranked], nms_iou)]
    return segments[kept], objectness[kept]


def as_proposals(segments: np.ndarray, objectness: np.ndarray) -> list[Proposal]:
    return [Proposal(float(s), float(e), float(o)) for (s, e), o in zip(segments, objectness)]
