# src/detector/roi_align.py
"""
1D RoIAlign.

Feature value f[i] sits at bin center i + 0.5. A segment [a, b) is cut into
output_size equal cells, each sampled at its center by linear interpolation
between the two neighbouring bin centers; gradients flow to both of them.
"""
import torch

from src.errors import DataError


def roi_align_1d(features: torch.Tensor, rois: torch.Tensor, output_size: int = 8) -> torch.Tensor:
    """Pool (R, C, S) features for rois (R, 3) = [batch index, start, end] over (B, C, L) input."""
    if features.dim() != 3:
        raise DataError(f"roi_align_1d expects (B, C, L) features, got {tuple(features.shape)}")
    if rois.dim() != 2 or rois.shape[1] != 3:
        raise DataError(f"rois must be (R, 3), got {tuple(rois.shape)}")
    _, channels, length = features.shape
    n_rois = rois.shape[0]
    if n_rois == 0:
        return features.new_zeros((0, channels, output_size))

    starts = rois[:, 1].to(features.dtype)
    ends = rois[:, 2].to(features.dtype)
    if torch.any(ends - starts <= 0):
        raise DataError("roi_align_1d got a degenerate segment (length <= 0)")

    cell = (ends - starts) / output_size
    offsets = torch.arange(output_size, dtype=features.dtype, device=features.device) + 0.5
    centers = starts[:, None] + offsets[None, :] * cell[:, None]
    u = (centers - 0.5).clamp(0.0, float(length - 1))
    lower = u.floor().long().clamp(max=max(length - 2, 0))
    upper = (lower + 1).clamp(max=length - 1)
    frac = u - lower.to(u.dtype)

    batch_index = rois[:, 0].long()
    rows = features[batch_index]
    lower_v = rows.gather(2, lower[:, None, :].expand(n_rois, channels, output_size))
    upper_v = rows.gather(2, upper[:, None, :].expand(n_rois, channels, output_size))
    frac = frac[:, None, :]
    return lower_v * (1.0 - frac) + upper_v * frac
