# src/detector/network.py
"""
RASA R-CNN: a 1D two-stage segment detector over the three-channel spectrogram.

    (B, 3, R, T) -> residual conv stack over (range, time), time halved per stage
                 -> range compressed per pyramid input
                 -> 3-level feature pyramid, strides 4/8/16, width P
                 -> segment proposal network (objectness + deltas per anchor)
                 -> 1D RoIAlign on the level picked by proposal length
                 -> two FC layers -> class softmax + class-agnostic refinement
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from src.detector.anchors import AnchorTable
from src.detector.config import PYRAMID_STAGES, ArchitectureConfig
from src.detector.roi_align import roi_align_1d
from src.errors import DataError
from src.session.model import EVENT_CATEGORIES

CLASS_NAMES: tuple[str, ...] = ("background",) + tuple(str(c) for c in EVENT_CATEGORIES)
MIN_INPUT_FRAMES = 64


def _activation(name: str):
    return F.gelu if name == "gelu" else F.relu


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, activation: str):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size, padding=pad)
        self.proj = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()
        self.act = _activation(activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv2(self.act(self.conv1(x))) + self.proj(x))


class RasaRCNN(nn.Module):
    def __init__(self, arch: ArchitectureConfig):
        super().__init__()
        self.arch = arch
        k = arch.kernel_size
        pad = k // 2
        width = arch.pyramid_width
        self.act = _activation(arch.activation)

        self.stem = nn.Conv2d(arch.in_channels, arch.stem_width, k, padding=pad)
        stages = []
        in_ch = arch.stem_width
        for out_ch in arch.stage_widths:
            stages.append(ResidualBlock(in_ch, out_ch, k, arch.activation))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

        self.lateral = nn.ModuleList(nn.Conv1d(arch.stage_widths[s], width, 1) for s in PYRAMID_STAGES)
        self.smooth = nn.ModuleList(nn.Conv1d(width, width, k, padding=pad) for _ in PYRAMID_STAGES)

        n_anchors = arch.n_scales
        self.spn_conv = nn.Conv1d(width, width, k, padding=pad)
        self.spn_cls = nn.Conv1d(width, n_anchors, 1)
        self.spn_reg = nn.Conv1d(width, 2 * n_anchors, 1)

        self.fc1 = nn.Linear(width * arch.roi_output_size, arch.head_hidden)
        self.fc2 = nn.Linear(arch.head_hidden, arch.head_hidden)
        self.cls_score = nn.Linear(arch.head_hidden, len(CLASS_NAMES))
        self.seg_pred = nn.Linear(arch.head_hidden, 2)

        self._anchor_cache: dict[tuple[int, ...], AnchorTable] = {}

    # -- backbone ----------------------------------------------------------

    def _check_input(self, x: torch.Tensor) -> None:
        arch = self.arch
        if x.dim() != 4 or x.shape[1] != arch.in_channels or x.shape[2] != arch.range_bins:
            raise DataError(
                f"detector expects (B, {arch.in_channels}, {arch.range_bins}, T) input, got {tuple(x.shape)}"
            )
        if x.shape[3] < MIN_INPUT_FRAMES:
            raise DataError(f"detector needs at least {MIN_INPUT_FRAMES} frames, got {x.shape[3]}")

    def _compress_range(self, x: torch.Tensor) -> torch.Tensor:
        if self.arch.range_pooling == "max":
            return x.amax(dim=2)
        return x.mean(dim=2)

    def backbone_forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Pyramid levels, finest first, each (B, P, L_level)."""
        self._check_input(x)
        h = self.act(self.stem(x))
        stage_outputs = []
        for stage in self.stages:
            h = stage(h)
            range_kernel = 2 if h.shape[2] >= 2 else 1
            h = F.avg_pool2d(h, kernel_size=(range_kernel, 2), stride=(range_kernel, 2))
            stage_outputs.append(h)

        laterals = [
            conv(self._compress_range(stage_outputs[s])) for conv, s in zip(self.lateral, PYRAMID_STAGES)
        ]
        merged = [laterals[-1]]
        for lateral in reversed(laterals[:-1]):
            coarse = F.interpolate(merged[0], size=lateral.shape[-1], mode="nearest")
            merged.insert(0, lateral + coarse)
        return [smooth(level) for smooth, level in zip(self.smooth, merged)]

    # -- proposals ---------------------------------------------------------

    def spn_forward(self, features: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        """Objectness logits (B, N) and deltas (B, N, 2) in AnchorTable order."""
        logits, deltas = [], []
        for level in features:
            batch, _, length = level.shape
            h = self.act(self.spn_conv(level))
            logits.append(self.spn_cls(h).permute(0, 2, 1).reshape(batch, -1))
            deltas.append(self.spn_reg(h).permute(0, 2, 1).reshape(batch, length * self.arch.n_scales, 2))
        return torch.cat(logits, dim=1), torch.cat(deltas, dim=1)

    def anchors_for(self, features: list[torch.Tensor]) -> AnchorTable:
        lengths = tuple(int(f.shape[-1]) for f in features)
        table = self._anchor_cache.get(lengths)
        if table is None:
            table = AnchorTable.build(lengths, self.arch.strides, self.arch.anchor_scales_s, self.arch.frame_rate_hz)
            self._anchor_cache[lengths] = table
        return table

    # -- second stage ------------------------------------------------------

    def roi_levels(self, lengths: torch.Tensor) -> torch.Tensor:
        bounds = torch.as_tensor(self.arch.roi_level_bounds_frames, dtype=lengths.dtype, device=lengths.device)
        return torch.bucketize(lengths, bounds, right=True)

    def pool(self, features: list[torch.Tensor], rois: torch.Tensor) -> torch.Tensor:
        """RoIAlign rois (R, 3) = [batch, start, end] in input frames -> (R, P, S)."""
        size = self.arch.roi_output_size
        pooled = features[0].new_zeros((rois.shape[0], features[0].shape[1], size))
        if rois.shape[0] == 0:
            return pooled
        levels = self.roi_levels(rois[:, 2] - rois[:, 1])
        for level, (feature, stride) in enumerate(zip(features, self.arch.strides)):
            mask = levels == level
            if not torch.any(mask):
                continue
            scaled = rois[mask].clone()
            length = float(feature.shape[-1])
            # floored level lengths can leave a clipped proposal just past the last bin
            starts = (scaled[:, 1] / stride).clamp(0.0, length - 1.0)
            ends = torch.maximum((scaled[:, 2] / stride).clamp(0.0, length), starts + 1e-3)
            scaled[:, 1], scaled[:, 2] = starts, ends
            pooled = pooled.index_put((mask.nonzero(as_tuple=True)[0],), roi_align_1d(feature, scaled, size))
        return pooled

    def head_forward(self, pooled: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Class logits (R, 5) and refinement deltas (R, 2)."""
        h = self.act(self.fc1(pooled.flatten(1)))
        h = self.act(self.fc2(h))
        return self.cls_score(h), self.seg_pred(h)


def receptive_margin(arch: ArchitectureConfig) -> int:
    """Frames beyond its own block that a level-0 pyramid feature can see.

    Level-0 position i summarises input frames [4i, 4i + 3]; its value depends
    on at most [4i - m, 4i + 3 + m] with m returned here.
    """
    half = arch.kernel_size // 2
    margin = half
    stride = 1
    stage_margins = []
    for _ in arch.stage_widths:
        margin += 2 * half * stride
        stride *= 2
        stage_margins.append((margin, stride))
    pyramid = [stage_margins[s] for s in PYRAMID_STAGES]
    merged = pyramid[-1][0]
    for level_margin, level_stride in reversed(pyramid[:-1]):
        # nearest upsampling of floored lengths can shift by one coarse step
        merged = max(level_margin, merged + 3 * level_stride)
    return merged + half * pyramid[0][1]
