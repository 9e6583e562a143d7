# src/detector/anchors.py
"""
Anchor segments, the (center, log-length) delta encoding and anchor matching.

Coordinates are input frames. Anchor i on a level with stride s is centred
at i*s + s/2, the middle of the input frames that feature i summarises.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from src.errors import InvariantError

# Largest log-length step decode will apply to tensors.
DECODE_LOG_CLIP = math.log(1000.0 / 16.0)


@dataclass(frozen=True, slots=True)
class AnchorSegment:
    center: float
    length: float
    scale_id: int
    level: int = 0

    def __post_init__(self):
        if not self.length > 0:
            raise InvariantError(f"anchor length must be > 0, got {self.length}")

    @property
    def start(self) -> float:
        return self.center - self.length / 2.0

    @property
    def end(self) -> float:
        return self.center + self.length / 2.0


@dataclass(frozen=True, slots=True)
class SegmentDelta:
    d_center: float
    d_log_length: float

    def __post_init__(self):
        if not (math.isfinite(self.d_center) and math.isfinite(self.d_log_length)):
            raise InvariantError("segment delta must be finite")


def generate_anchors(
    level_lengths,
    strides,
    scales_s,
    frame_rate: float = 1.0,
) -> list[AnchorSegment]:
    """Level-major, then time step, then scale: matches the SPN output layout."""
    anchors = []
    for level, (length, stride) in enumerate(zip(level_lengths, strides)):
        for step in range(int(length)):
            center = step * stride + stride / 2.0
            for scale_id, scale in enumerate(scales_s):
                anchors.append(AnchorSegment(center, scale * frame_rate, scale_id, level))
    return anchors


@dataclass(frozen=True, slots=True, eq=False)
class AnchorTable:
    """Vectorised anchors: (N,) centers / lengths plus start-end array."""

    centers: np.ndarray
    lengths: np.ndarray
    levels: np.ndarray

    @classmethod
    def build(cls, level_lengths, strides, scales_s, frame_rate: float = 1.0) -> AnchorTable:
        centers, lengths, levels = [], [], []
        scales = np.asarray(scales_s, dtype=np.float64) * frame_rate
        for level, (length, stride) in enumerate(zip(level_lengths, strides)):
            steps = np.arange(int(length), dtype=np.float64) * stride + stride / 2.0
            centers.append(np.repeat(steps, scales.size))
            lengths.append(np.tile(scales, int(length)))
            levels.append(np.full(int(length) * scales.size, level, dtype=np.int64))
        if not centers:
            empty = np.zeros(0)
            return cls(empty, empty, np.zeros(0, dtype=np.int64))
        return cls(np.concatenate(centers), np.concatenate(lengths), np.concatenate(levels))

    def __len__(self) -> int:
        return int(self.centers.size)

    @property
    def segments(self) -> np.ndarray:
        half = self.lengths / 2.0
        return np.stack([self.centers - half, self.centers + half], axis=1)


def _check_lengths(*lengths: float) -> None:
    for length in lengths:
        if not length > 0:
            raise InvariantError(f"segment and anchor lengths must be > 0, got {length}")


def encode_segment(gt: tuple[float, float], anchor: AnchorSegment) -> SegmentDelta:
    g_start, g_end = gt
    g_len = g_end - g_start
    _check_lengths(g_len, anchor.length)
    g_center = (g_start + g_end) / 2.0
    return SegmentDelta((g_center - anchor.center) / anchor.length, math.log(g_len / anchor.length))


def decode_segment(delta: SegmentDelta, anchor: AnchorSegment) -> tuple[float, float]:
    center = anchor.center + delta.d_center * anchor.length
    length = anchor.length * math.exp(delta.d_log_length)
    return center - length / 2.0, center + length / 2.0


def encode_array(gt: np.ndarray, ref_centers: np.ndarray, ref_lengths: np.ndarray) -> np.ndarray:
    """Vectorised encode_segment: gt (N, 2) start/end against N references."""
    g_len = gt[:, 1] - gt[:, 0]
    if np.any(g_len <= 0) or np.any(ref_lengths <= 0):
        raise InvariantError("segment and anchor lengths must be > 0")
    g_center = (gt[:, 0] + gt[:, 1]) / 2.0
    return np.stack([(g_center - ref_centers) / ref_lengths, np.log(g_len / ref_lengths)], axis=1)


def decode_tensor(deltas: torch.Tensor, ref_centers: torch.Tensor, ref_lengths: torch.Tensor) -> torch.Tensor:
    """Vectorised decode_segment; log-length steps are clipped to keep exp finite."""
    center = ref_centers + deltas[..., 0] * ref_lengths
    length = ref_lengths * torch.exp(deltas[..., 1].clamp(max=DECODE_LOG_CLIP))
    return torch.stack([center - length / 2.0, center + length / 2.0], dim=-1)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between segment arrays a (N, 2) and b (M, 2)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.clip(
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
        0.0,
        None,
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


@dataclass(frozen=True, slots=True, eq=False)
class AnchorMatch:
    labels: np.ndarray     # 1 positive, 0 negative, -1 ignored
    matched_gt: np.ndarray  # best gt index per anchor, -1 when there are none
    targets: np.ndarray    # (N, 2) deltas, zero for non-positives


def match_anchors(
    anchors: np.ndarray,
    gt_segments: np.ndarray,
    pos_iou: float = 0.7,
    neg_iou: float = 0.3,
) -> AnchorMatch:
    """Label anchors (N, 2 start/end) against ground truth (M, 2).

    Positive: IoU >= pos_iou with some gt, or among the anchors attaining a
    gt's highest (non-zero) IoU. Negative: best IoU < neg_iou. Otherwise
    ignored. Positives regress towards their best-IoU gt (lowest index on ties).
    """
    if not 0 <= neg_iou < pos_iou <= 1:
        raise InvariantError(f"need 0 <= neg_iou < pos_iou <= 1, got {neg_iou}, {pos_iou}")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    gt_segments = np.asarray(gt_segments, dtype=np.float64).reshape(-1, 2)
    n = anchors.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    targets = np.zeros((n, 2), dtype=np.float64)
    if gt_segments.shape[0] == 0:
        labels[:] = 0
        return AnchorMatch(labels, np.full(n, -1, dtype=np.int64), targets)
    if n == 0:
        return AnchorMatch(labels, np.zeros(0, dtype=np.int64), targets)

    iou = pairwise_iou(anchors, gt_segments)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n), best_gt]
    labels[best_iou < neg_iou] = 0
    labels[best_iou >= pos_iou] = 1

    gt_best = iou.max(axis=0)
    for j in np.flatnonzero(gt_best > 0):
        labels[iou[:, j] == gt_best[j]] = 1

    positive = labels == 1
    if np.any(positive):
        centers = anchors[positive].mean(axis=1)
        lengths = anchors[positive, 1] - anchors[positive, 0]
        targets[positive] = encode_array(gt_segments[best_gt[positive]], centers, lengths)
    return AnchorMatch(labels, best_gt, targets)
