# src/simulation/config.py
"""
CohortConfig: everything the synthetic cohort generator needs, read from JSON.

The simulator constants are declared configuration. They make events visible
to the pre-processing and fusion stages; they are not physiological claims.
"""
from __future__ import annotations

from pydantic import BaseModel, Field, field_validator, model_validator

from src.session.model import EVENT_CATEGORIES, EventCategory, RadarConfig


class SeverityGroup(BaseModel):
    name: str
    mean: float = Field(ge=0)
    spread: float = Field(default=0.0, ge=0)

    @property
    def bounds(self) -> tuple[float, float]:
        return max(0.0, self.mean - self.spread), self.mean + self.spread


def default_groups() -> list[SeverityGroup]:
    return [
        SeverityGroup(name="healthy", mean=2.3, spread=1.0),
        SeverityGroup(name="mild", mean=8.1, spread=2.2),
        SeverityGroup(name="moderate", mean=21.9, spread=3.9),
        SeverityGroup(name="severe", mean=57.2, spread=18.1),
    ]


class EventMix(BaseModel):
    CA: float = Field(default=0.2, ge=0, le=1)
    OA: float = Field(default=0.4, ge=0, le=1)
    MA: float = Field(default=0.1, ge=0, le=1)
    H: float = Field(default=0.3, ge=0, le=1)

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.CA + self.OA + self.MA + self.H
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"event mix probabilities must sum to 1, got {total}")
        return self

    def probabilities(self) -> list[float]:
        return [getattr(self, str(c)) for c in EVENT_CATEGORIES]


class SpO2Model(BaseModel):
    baseline_pct: float = Field(default=97.0, gt=0, le=100)
    sample_rate_hz: float = Field(default=1.0, gt=0)
    # Must stay below the 60 s fusion window so the desaturation lands inside it.
    delay_s: float = Field(default=25.0, ge=0)
    depth_base_pct: float = Field(default=3.0, ge=0)
    depth_slope_pct_per_s: float = Field(default=0.1, ge=0)
    depth_cap_pct: float = Field(default=10.0, ge=0)
    hypopnea_depth_factor: float = Field(default=0.6, ge=0)
    recovery_tau_s: float = Field(default=15.0, gt=0)
    noise_sigma_pct: float = Field(default=0.15, ge=0)
    silent_ca_fraction: float = Field(default=0.2, ge=0, le=1)

    def depth_for(self, category: EventCategory, duration_s: float) -> float:
        depth = min(self.depth_base_pct + self.depth_slope_pct_per_s * (duration_s - 10.0), self.depth_cap_pct)
        depth = max(depth, 0.0)
        if category is EventCategory.H:
            depth *= self.hypopnea_depth_factor
        return depth


class RadarModel(BaseModel):
    start_frequency_hz: float = Field(default=60e9, gt=0)
    sweep_bandwidth_hz: float = Field(default=3e9, gt=0)
    frame_rate_hz: float = Field(default=50.0, gt=0)
    samples_per_chirp: int = Field(default=256, gt=0)
    reflection_amplitude: float = Field(default=1.0, gt=0)
    chest_displacement_mm: float = Field(default=0.5, gt=0)
    breathing_rate_hz: tuple[float, float] = (0.2, 0.4)
    apnea_amplitude_factor: float = Field(default=0.05, ge=0, le=1)
    hypopnea_amplitude_factor: float = Field(default=0.5, ge=0, le=1)
    ramp_s: float = Field(default=2.0, ge=0)
    snr_db: float | None = 20.0
    artifact_duration_s: float = Field(default=4.0, gt=0)
    artifact_phase_sigma_rad: float = Field(default=3.0, ge=0)

    @field_validator("breathing_rate_hz")
    @classmethod
    def _ordered_rate(cls, value):
        lo, hi = value
        if not 0 < lo <= hi:
            raise ValueError(f"breathing_rate_hz must satisfy 0 < low <= high, got {value}")
        return value

    def to_radar_config(self) -> RadarConfig:
        return RadarConfig(
            start_frequency=self.start_frequency_hz,
            sweep_bandwidth=self.sweep_bandwidth_hz,
            frame_rate=self.frame_rate_hz,
            samples_per_chirp=self.samples_per_chirp,
        )


class CohortConfig(BaseModel):
    n_subjects: int = Field(default=24, ge=0)
    duration_s: float = Field(default=3600.0, gt=0)
    groups: list[SeverityGroup] = Field(default_factory=default_groups, min_length=1)
    event_mix: EventMix = Field(default_factory=EventMix)
    event_duration_s: tuple[float, float] = (10.0, 60.0)
    min_gap_s: float = Field(default=20.0, ge=0)
    artifact_rate_per_h: float = Field(default=1.0, ge=0)
    subject_range_m: float = Field(default=1.0, gt=0)
    spo2: SpO2Model = Field(default_factory=SpO2Model)
    radar: RadarModel = Field(default_factory=RadarModel)
    seed: int = 42

    @field_validator("event_duration_s")
    @classmethod
    def _duration_range(cls, value):
        lo, hi = value
        if not 10.0 <= lo <= hi:
            raise ValueError(f"event_duration_s must satisfy 10 <= low <= high, got {value}")
        return value

    @property
    def duration_h(self) -> float:
        return self.duration_s / 3600.0

    def group_for(self, subject_index: int) -> SeverityGroup:
        return self.groups[subject_index % len(self.groups)]
