# src/session/model.py
"""
Core value types shared by every Rosa stage.

All types are frozen and validate their invariants on construction, so a
value that exists is a valid value. Array-carrying types compare
structurally (same metadata, bit-identical arrays).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str.__str__(self)

        def __format__(self, format_spec: str) -> str:
            return str.__format__(self, format_spec)

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()

import numpy as np

from src.errors import InvariantError

SPEED_OF_LIGHT_M_S = 299_792_458.0
MIN_EVENT_DURATION_S = 10.0
_DURATION_EPS = 1e-9

Segment = tuple[float, float]


class EventCategory(StrEnum):
    CA = "CA"
    OA = "OA"
    MA = "MA"
    H = "H"


APNEA_CATEGORIES = frozenset({EventCategory.CA, EventCategory.OA, EventCategory.MA})
EVENT_CATEGORIES: tuple[EventCategory, ...] = tuple(EventCategory)


def parse_category(value) -> EventCategory:
    try:
        return EventCategory(str(value))
    except ValueError as exc:
        raise InvariantError(f"unknown event category {value!r}") from exc


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantError(message)


@dataclass(frozen=True, slots=True)
class RadarConfig:
    """FMCW front-end description; defaults follow the 60 GHz single-receiver setup."""

    start_frequency: float = 60e9
    sweep_bandwidth: float = 3e9
    frame_rate: float = 50.0
    samples_per_chirp: int = 256

    def __post_init__(self):
        for name in ("start_frequency", "sweep_bandwidth", "frame_rate", "samples_per_chirp"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value > 0, f"RadarConfig.{name} must be > 0, got {value!r}")
        _require(
            float(self.samples_per_chirp).is_integer(),
            f"RadarConfig.samples_per_chirp must be an integer, got {self.samples_per_chirp!r}",
        )

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT_M_S / (2.0 * self.sweep_bandwidth)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT_M_S / self.start_frequency


@dataclass(frozen=True, slots=True, eq=False)
class BeatMatrix:
    """Beat samples x[tau, t] as (n_chirps, samples_per_chirp) complex64."""

    data: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        _require(isinstance(self.data, np.ndarray), "BeatMatrix.data must be a numpy array")
        _require(self.data.ndim == 2, f"BeatMatrix.data must be 2-D, got shape {self.data.shape}")
        _require(np.iscomplexobj(self.data), "BeatMatrix.data must be complex")
        _require(self.data.shape[0] >= 1, "BeatMatrix needs at least one chirp")
        _require(
            self.data.shape[1] == self.config.samples_per_chirp,
            f"BeatMatrix has {self.data.shape[1]} samples per chirp, config says "
            f"{self.config.samples_per_chirp}",
        )

    @property
    def n_chirps(self) -> int:
        return int(self.data.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_chirps / self.config.frame_rate

    def __eq__(self, other):
        if not isinstance(other, BeatMatrix):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, slots=True, eq=False)
class RangeTimeMatrix:
    """R[r, t]: complex range profile per chirp, shape (n_range_bins, n_chirps).

    ``first_bin`` is the absolute range-bin index of row 0 (non-zero after a
    range crop).
    """

    data: np.ndarray
    bin_spacing: float
    slow_time_rate: float
    first_bin: int = 0

    def __post_init__(self):
        _require(self.data.ndim == 2, f"RangeTimeMatrix.data must be 2-D, got shape {self.data.shape}")
        _require(self.bin_spacing > 0, "RangeTimeMatrix.bin_spacing must be > 0")
        _require(self.slow_time_rate > 0, "RangeTimeMatrix.slow_time_rate must be > 0")
        _require(self.first_bin >= 0, "RangeTimeMatrix.first_bin must be >= 0")

    @property
    def n_range_bins(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_chirps(self) -> int:
        return int(self.data.shape[1])

    @property
    def duration_s(self) -> float:
        return self.n_chirps / self.slow_time_rate

    def with_data(self, data: np.ndarray) -> RangeTimeMatrix:
        return replace(self, data=data)

    def crop(self, start_bin: int, stop_bin: int) -> RangeTimeMatrix:
        """Keep absolute bins [start_bin, stop_bin)."""
        lo = start_bin - self.first_bin
        hi = stop_bin - self.first_bin
        if lo < 0 or hi > self.n_range_bins or hi <= lo:
            raise InvariantError(
                f"range crop [{start_bin}, {stop_bin}) outside available bins "
                f"[{self.first_bin}, {self.first_bin + self.n_range_bins})"
            )
        return replace(self, data=self.data[lo:hi], first_bin=start_bin)

    def __eq__(self, other):
        if not isinstance(other, RangeTimeMatrix):
            return NotImplemented
        return (
            self.bin_spacing == other.bin_spacing
            and self.slow_time_rate == other.slow_time_rate
            and self.first_bin == other.first_bin
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, slots=True, eq=False)
class SpO2Trace:
    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        _require(samples.ndim == 1, "SpO2Trace.samples must be 1-D")
        _require(self.sample_rate > 0, f"SpO2Trace.sample_rate must be > 0, got {self.sample_rate!r}")
        _require(bool(np.all(np.isfinite(samples))), "SpO2Trace contains non-finite samples")
        if samples.size:
            lo, hi = float(samples.min()), float(samples.max())
            _require(lo >= 0.0 and hi <= 100.0, f"SpO2 samples must lie in [0, 100], got [{lo}, {hi}]")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, SpO2Trace):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True, slots=True)
class EventAnnotation:
    category: EventCategory
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "category", parse_category(self.category))
        _require(
            math.isfinite(self.t_start) and math.isfinite(self.t_end),
            "event times must be finite",
        )
        _require(self.t_end > self.t_start, f"event t_end {self.t_end} must exceed t_start {self.t_start}")
        _require(
            self.t_end - self.t_start >= MIN_EVENT_DURATION_S - _DURATION_EPS,
            f"event lasts {self.t_end - self.t_start:.3f} s, minimum is {MIN_EVENT_DURATION_S:g} s",
        )

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def span(self) -> Segment:
        return (self.t_start, self.t_end)


@dataclass(frozen=True, slots=True)
class DetectedSegment:
    category: EventCategory
    score: float
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "category", parse_category(self.category))
        _require(
            math.isfinite(self.t_start) and math.isfinite(self.t_end),
            "detection times must be finite",
        )
        _require(self.t_end > self.t_start, f"detection t_end {self.t_end} must exceed t_start {self.t_start}")
        _require(0.0 <= self.score <= 1.0, f"detection score {self.score} outside [0, 1]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def span(self) -> Segment:
        return (self.t_start, self.t_end)

    def with_score(self, score: float) -> DetectedSegment:
        return replace(self, score=float(score))


@dataclass(frozen=True, slots=True, eq=False)
class SleepSession:
    id: str
    spo2: SpO2Trace
    tst: float
    duration_s: float
    events: tuple[EventAnnotation, ...] = field(default_factory=tuple)
    beat: BeatMatrix | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        _require(bool(self.id) and "/" not in self.id, f"invalid session id {self.id!r}")
        _require(math.isfinite(self.tst) and self.tst > 0, f"TST must be > 0 hours, got {self.tst!r}")
        _require(self.duration_s > 0, f"session duration must be > 0, got {self.duration_s!r}")
        for event in self.events:
            _require(
                event.t_start >= 0.0 and event.t_end <= self.duration_s + _DURATION_EPS,
                f"event [{event.t_start}, {event.t_end}] outside session [0, {self.duration_s}]",
            )
        if self.beat is not None:
            _require(
                abs(self.beat.duration_s - self.duration_s) <= 1.0 / self.beat.config.frame_rate + _DURATION_EPS,
                f"beat matrix covers {self.beat.duration_s} s, session declares {self.duration_s} s",
            )

    @property
    def has_beat(self) -> bool:
        return self.beat is not None

    def __eq__(self, other):
        if not isinstance(other, SleepSession):
            return NotImplemented
        return (
            self.id == other.id
            and self.tst == other.tst
            and self.duration_s == other.duration_s
            and self.events == other.events
            and self.spo2 == other.spo2
            and self.beat == other.beat
        )

    __hash__ = None
