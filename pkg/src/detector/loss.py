# src/detector/loss.py
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from src.errors import NumericError


@dataclass(slots=True)
class LossTerms:
    spn_cls: torch.Tensor
    spn_reg: torch.Tensor
    head_cls: torch.Tensor
    head_reg: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.spn_cls + self.spn_reg + self.head_cls + self.head_reg

    def as_floats(self) -> dict[str, float]:
        return {
            "loss_total": float(self.total.detach()),
            "loss_spn_cls": float(self.spn_cls.detach()),
            "loss_spn_reg": float(self.spn_reg.detach()),
            "loss_head_cls": float(self.head_cls.detach()),
            "loss_head_reg": float(self.head_reg.detach()),
        }


def _masked_smooth_l1(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor, beta: float) -> torch.Tensor:
    count = int(mask.sum())
    if count == 0:
        return pred.sum() * 0.0
    return F.smooth_l1_loss(pred[mask], target[mask], beta=beta, reduction="sum") / count


def detection_loss(
    spn_logits: torch.Tensor,
    spn_deltas: torch.Tensor,
    anchor_labels: torch.Tensor,
    anchor_targets: torch.Tensor,
    head_logits: torch.Tensor,
    head_deltas: torch.Tensor,
    roi_labels: torch.Tensor,
    roi_targets: torch.Tensor,
    class_weights: torch.Tensor | None = None,
    spn_pos_weight: float = 1.0,
    beta: float = 1.0,
) -> LossTerms:
    """Four-term two-stage loss.

    Anchor labels: 1 positive, 0 negative, -1 ignored (or not sampled).
    RoI labels: 0 background, 1..4 event classes. Regression targets only
    count for positive anchors / foreground RoIs; each term is averaged over
    the entries it covers.
    """
    sampled = anchor_labels >= 0
    if int(sampled.sum()) == 0:
        spn_cls = spn_logits.sum() * 0.0
    else:
        pos_weight = torch.as_tensor(spn_pos_weight, dtype=spn_logits.dtype)
        spn_cls = F.binary_cross_entropy_with_logits(
            spn_logits[sampled], anchor_labels[sampled].to(spn_logits.dtype), pos_weight=pos_weight
        )
    spn_reg = _masked_smooth_l1(spn_deltas, anchor_targets.to(spn_deltas.dtype), anchor_labels == 1, beta)

    if head_logits.shape[0] == 0:
        head_cls = head_logits.sum() * 0.0
    else:
        weight = None if class_weights is None else class_weights.to(head_logits.dtype)
        head_cls = F.cross_entropy(head_logits, roi_labels.long(), weight=weight)
    head_reg = _masked_smooth_l1(head_deltas, roi_targets.to(head_deltas.dtype), roi_labels > 0, beta)

    terms = LossTerms(spn_cls, spn_reg, head_cls, head_reg)
    values = terms.as_floats()
    if not all(math.isfinite(v) for v in values.values()):
        detail = ", ".join(f"{k}={v:.6g}" for k, v in values.items())
        error = NumericError(f"non-finite detection loss ({detail})")
        error.terms = values
        raise error
    return terms
