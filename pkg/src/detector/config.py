# src/detector/config.py
"""
Architecture and training configuration for the segment detector.

Every structural constant of the network, the anchor scheme, the matcher and
the post-processing lives here so experiments change JSON, not code.
"""
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

N_STAGES = 4
PYRAMID_STAGES = (1, 2, 3)  # stage outputs feeding the pyramid -> strides 4, 8, 16


class ArchitectureConfig(BaseModel):
    in_channels: int = Field(default=3, ge=1)
    range_bins: int = Field(default=32, ge=1)
    stem_width: int = Field(default=16, ge=1)
    stage_widths: list[int] = Field(default_factory=lambda: [16, 32, 64, 64])
    pyramid_width: int = Field(default=64, ge=1)
    kernel_size: int = Field(default=3, ge=1)
    activation: Literal["relu", "gelu"] = "relu"
    range_pooling: Literal["mean", "max"] = "mean"

    frame_rate_hz: float = Field(default=1.0, gt=0)
    anchor_scales_s: list[float] = Field(default_factory=lambda: [15.0, 30.0, 60.0, 120.0])
    pos_iou: float = Field(default=0.7, ge=0, le=1)
    neg_iou: float = Field(default=0.3, ge=0, le=1)
    spn_batch_size: int = Field(default=256, ge=1)
    spn_positive_fraction: float = Field(default=0.5, gt=0, le=1)
    spn_pos_weight: float = Field(default=1.0, gt=0)

    pre_nms_top_k: int = Field(default=200, ge=1)
    train_pre_nms_top_k: int = Field(default=400, ge=1)
    proposal_nms_iou: float = Field(default=0.7, gt=0, le=1)

    roi_output_size: int = Field(default=8, ge=1)
    roi_level_bounds_frames: list[float] = Field(default_factory=lambda: [32.0, 64.0])
    roi_batch_size: int = Field(default=64, ge=1)
    roi_positive_fraction: float = Field(default=0.25, gt=0, le=1)
    roi_fg_iou: float = Field(default=0.5, gt=0, le=1)
    head_hidden: int = Field(default=128, ge=1)
    smooth_l1_beta: float = Field(default=1.0, gt=0)

    score_floor: float = Field(default=0.05, ge=0, le=1)
    class_nms_iou: float = Field(default=0.5, gt=0, le=1)
    agnostic_nms_iou: float | None = Field(default=0.3, gt=0, le=1)
    min_duration_s: float = Field(default=10.0, ge=0)
    max_detections: int = Field(default=500, ge=1)

    @field_validator("stage_widths")
    @classmethod
    def _four_stages(cls, value):
        if len(value) != N_STAGES or any(w < 1 for w in value):
            raise ValueError(f"stage_widths needs {N_STAGES} positive widths, got {value}")
        return value

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value):
        if value % 2 == 0:
            raise ValueError("kernel_size must be odd so padding keeps lengths")
        return value

    @model_validator(mode="after")
    def _check_thresholds(self):
        if not self.neg_iou < self.pos_iou:
            raise ValueError("neg_iou must be below pos_iou")
        if not self.anchor_scales_s or any(s <= 0 for s in self.anchor_scales_s):
            raise ValueError("anchor_scales_s must be non-empty and positive")
        if len(self.roi_level_bounds_frames) != len(PYRAMID_STAGES) - 1:
            raise ValueError("roi_level_bounds_frames needs one bound per pyramid level boundary")
        return self

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(2 ** (stage + 1) for stage in PYRAMID_STAGES)

    @property
    def n_scales(self) -> int:
        return len(self.anchor_scales_s)


class TrainConfig(BaseModel):
    epochs: int = Field(default=80, ge=1)
    base_lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    schedule: Literal["cosine"] = "cosine"
    class_weights: list[float] | None = None
    crop_frames: int = Field(default=1800, ge=16)
    crops_per_session: int = Field(default=2, ge=1)
    batch_size: int = Field(default=4, ge=1)
    event_biased_fraction: float = Field(default=1.0, ge=0, le=1)
    grad_clip_norm: float | None = Field(default=10.0, gt=0)
    folds: int = Field(default=4, ge=1)
    seed: int = 0

    @field_validator("class_weights")
    @classmethod
    def _five_weights(cls, value):
        if value is not None and (len(value) != 5 or any(w <= 0 for w in value)):
            raise ValueError("class_weights needs 5 positive entries (background, CA, OA, MA, H)")
        return value
