# src/detector/targets.py
"""
Training targets for both detector stages.

build_targets() works on detached network outputs only (matching, sampling,
proposal generation); compute_loss() is the differentiable part, so a caller
can freeze targets and differentiate the loss alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from src.detector.anchors import encode_array, match_anchors, pairwise_iou
from src.detector.loss import LossTerms, detection_loss
from src.detector.network import RasaRCNN
from src.detector.proposals import propose


@dataclass(slots=True, eq=False)
class TargetBatch:
    anchor_labels: torch.Tensor   # (B*N,) 1 / 0 / -1
    anchor_targets: torch.Tensor  # (B*N, 2)
    rois: torch.Tensor            # (R, 3) batch index, start, end
    roi_labels: torch.Tensor      # (R,) 0 background, 1..4 classes
    roi_targets: torch.Tensor     # (R, 2)


def sample_anchor_labels(labels: np.ndarray, batch_size: int, positive_fraction: float, rng) -> np.ndarray:
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    n_pos = min(positives.size, int(batch_size * positive_fraction))
    n_neg = min(negatives.size, batch_size - n_pos)
    sampled = np.full(labels.shape, -1, dtype=np.int64)
    sampled[rng.choice(positives, n_pos, replace=False)] = 1
    sampled[rng.choice(negatives, n_neg, replace=False)] = 0
    return sampled


def assign_roi_targets(
    proposals: np.ndarray,
    gt_segments: np.ndarray,
    gt_labels: np.ndarray,
    fg_iou: float,
    batch_size: int,
    positive_fraction: float,
    rng,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Label proposals (plus the ground truth itself) and sample a RoI minibatch."""
    rois = np.concatenate([proposals.reshape(-1, 2), gt_segments.reshape(-1, 2)], axis=0)
    labels = np.zeros(rois.shape[0], dtype=np.int64)
    targets = np.zeros((rois.shape[0], 2), dtype=np.float64)
    if gt_segments.shape[0] > 0 and rois.shape[0] > 0:
        iou = pairwise_iou(rois, gt_segments)
        best = iou.argmax(axis=1)
        fg = iou[np.arange(rois.shape[0]), best] >= fg_iou
        labels[fg] = gt_labels[best[fg]]
        if np.any(fg):
            centers = rois[fg].mean(axis=1)
            lengths = rois[fg, 1] - rois[fg, 0]
            targets[fg] = encode_array(gt_segments[best[fg]], centers, lengths)

    foreground = np.flatnonzero(labels > 0)
    background = np.flatnonzero(labels == 0)
    n_fg = min(foreground.size, int(batch_size * positive_fraction))
    n_bg = min(background.size, batch_size - n_fg)
    chosen = np.concatenate(
        [rng.choice(foreground, n_fg, replace=False), rng.choice(background, n_bg, replace=False)]
    ).astype(np.int64)
    return rois[chosen], labels[chosen], targets[chosen]


def build_targets(
    model: RasaRCNN,
    features: list[torch.Tensor],
    logits: torch.Tensor,
    deltas: torch.Tensor,
    gt_segments: list[np.ndarray],
    gt_labels: list[np.ndarray],
    rng: np.random.Generator,
    n_frames: int | None = None,
) -> TargetBatch:
    arch = model.arch
    anchors = model.anchors_for(features)
    anchor_segments = anchors.segments
    if n_frames is None:
        n_frames = features[0].shape[-1] * arch.strides[0]

    labels, targets, rois, roi_labels, roi_targets = [], [], [], [], []
    for b in range(logits.shape[0]):
        gts = np.asarray(gt_segments[b], dtype=np.float64).reshape(-1, 2)
        match = match_anchors(anchor_segments, gts, arch.pos_iou, arch.neg_iou)
        labels.append(sample_anchor_labels(match.labels, arch.spn_batch_size, arch.spn_positive_fraction, rng))
        targets.append(match.targets)

        proposals, _ = propose(
            logits[b], deltas[b], anchors, n_frames, arch.train_pre_nms_top_k, arch.proposal_nms_iou
        )
        r, rl, rt = assign_roi_targets(
            proposals,
            gts,
            np.asarray(gt_labels[b], dtype=np.int64),
            arch.roi_fg_iou,
            arch.roi_batch_size,
            arch.roi_positive_fraction,
            rng,
        )
        rois.append(np.column_stack([np.full(r.shape[0], b, dtype=np.float64), r]))
        roi_labels.append(rl)
        roi_targets.append(rt)

    dtype = logits.dtype
    return TargetBatch(
        anchor_labels=torch.from_numpy(np.concatenate(labels)),
        anchor_targets=torch.from_numpy(np.concatenate(targets)).to(dtype),
        rois=torch.from_numpy(np.concatenate(rois)).to(dtype),
        roi_labels=torch.from_numpy(np.concatenate(roi_labels)),
        roi_targets=torch.from_numpy(np.concatenate(roi_targets)).to(dtype),
    )


def compute_loss(
    model: RasaRCNN,
    features: list[torch.Tensor],
    logits: torch.Tensor,
    deltas: torch.Tensor,
    targets: TargetBatch,
    class_weights: torch.Tensor | None = None,
) -> LossTerms:
    pooled = model.pool(features, targets.rois)
    head_logits, head_deltas = model.head_forward(pooled)
    return detection_loss(
        logits.reshape(-1),
        deltas.reshape(-1, 2),
        targets.anchor_labels,
        targets.anchor_targets,
        head_logits,
        head_deltas,
        targets.roi_labels,
        targets.roi_targets,
        class_weights=class_weights,
        spn_pos_weight=model.arch.spn_pos_weight,
        beta=model.arch.smooth_l1_beta,
    )


def training_loss(
    model: RasaRCNN,
    x: torch.Tensor,
    gt_segments: list[np.ndarray],
    gt_labels: list[np.ndarray],
    rng: np.random.Generator,
    class_weights: torch.Tensor | None = None,
) -> LossTerms:
    features = model.backbone_forward(x)
    logits, deltas = model.spn_forward(features)
    targets = build_targets(model, features, logits, deltas, gt_segments, gt_labels, rng, n_frames=x.shape[-1])
    return compute_loss(model, features, logits, deltas, targets, class_weights)
