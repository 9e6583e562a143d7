# src/dsp/spectrogram.py
"""
Spectrogram containers and the ``.spec`` file format.

A ``.spec`` file is a framed binary (see src.session.store) whose header
records dims, frame rate, bin spacing, first range bin, kind and the
per-channel normalization record; the payload is row-major ``<f4``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
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

from src.errors import InvariantError, SessionFormatError
from src.session.store import read_framed_file, write_framed_file

logger = logging.getLogger(__name__)

SPEC_MAGIC = b"RSPC"
SPEC_FORMAT = "rosa-spec/1"
SPEC_DTYPE = np.dtype("<f4")
DOPPLER_MAX_HZ = 5.0
VARIANCE_FLOOR = 1e-12
_DOPPLER_EPS = 1e-6


class SpectrogramKind(StrEnum):
    MOVEMENT = "movement"
    BREATHING = "breathing"
    DOPPLER = "doppler"


CHANNEL_ORDER = (SpectrogramKind.MOVEMENT, SpectrogramKind.BREATHING, SpectrogramKind.DOPPLER)


@dataclass(frozen=True, slots=True, eq=False)
class Spectrogram:
    data: np.ndarray
    frame_rate: float
    bin_spacing: float
    kind: SpectrogramKind
    first_bin: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SpectrogramKind(self.kind))
        if self.data.ndim != 2:
            raise InvariantError(f"Spectrogram data must be 2-D, got shape {self.data.shape}")
        if self.frame_rate <= 0 or self.bin_spacing <= 0:
            raise InvariantError("Spectrogram frame_rate and bin_spacing must be > 0")
        if not np.all(np.isfinite(self.data)):
            raise InvariantError(f"{self.kind} spectrogram contains non-finite values")
        if self.kind is SpectrogramKind.DOPPLER:
            ok = (self.data == 0) | ((self.data >= 0) & (self.data <= DOPPLER_MAX_HZ + _DOPPLER_EPS))
            if not np.all(ok):
                raise InvariantError(f"Doppler values must lie in [0, {DOPPLER_MAX_HZ}] Hz")
        elif self.data.size and float(self.data.min()) < 0:
            raise InvariantError(f"{self.kind} spectrogram holds powers and must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.data.shape)

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True, slots=True)
class ChannelNormalization:
    mean: float
    std: float


@dataclass(frozen=True, slots=True, eq=False)
class ThreeChannelSpectrogram:
    """Detector input: float32 array (3, n_range_bins, n_frames) in (x_M, x_B, x_D) order."""

    data: np.ndarray
    frame_rate: float
    bin_spacing: float
    first_bin: int = 0
    normalization: tuple[ChannelNormalization, ...] | None = field(default=None)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise InvariantError(f"three-channel spectrogram must be (3, R, T), got {self.data.shape}")
        if self.normalization is not None and len(self.normalization) != 3:
            raise InvariantError("normalization record needs one entry per channel")

    @property
    def n_range_bins(self) -> int:
        return int(self.data.shape[1])

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[2])

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, ThreeChannelSpectrogram):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.bin_spacing == other.bin_spacing
            and self.first_bin == other.first_bin
            and self.normalization == other.normalization
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def concat_channels(xm: Spectrogram, xb: Spectrogram, xd: Spectrogram, normalize: bool = True) -> ThreeChannelSpectrogram:
    channels = (xm, xb, xd)
    reference = channels[0]
    for ch in channels[1:]:
        if ch.shape != reference.shape or ch.frame_rate != reference.frame_rate:
            raise InvariantError(
                f"cannot concatenate {ch.kind} {ch.shape}@{ch.frame_rate}Hz with "
                f"{reference.kind} {reference.shape}@{reference.frame_rate}Hz"
            )

    stacked = np.stack([np.asarray(ch.data, dtype=np.float64) for ch in channels])
    record = None
    if normalize:
        entries = []
        for idx in range(3):
            channel = stacked[idx]
            mean = float(channel.mean()) if channel.size else 0.0
            var = float(channel.var()) if channel.size else 0.0
            std = float(np.sqrt(max(var, VARIANCE_FLOOR)))
            if var < VARIANCE_FLOOR:
                stacked[idx] = 0.0
            else:
                stacked[idx] = (channel - mean) / std
            entries.append(ChannelNormalization(mean=mean, std=std))
        record = tuple(entries)

    return ThreeChannelSpectrogram(
        data=stacked.astype(np.float32),
        frame_rate=reference.frame_rate,
        bin_spacing=reference.bin_spacing,
        first_bin=reference.first_bin,
        normalization=record,
    )


def save_spectrogram(path, spec: Spectrogram | ThreeChannelSpectrogram) -> None:
    if isinstance(spec, ThreeChannelSpectrogram):
        kind = "three_channel"
        channels = [str(k) for k in CHANNEL_ORDER]
        normalization = (
            [{"mean": n.mean, "std": n.std} for n in spec.normalization]
            if spec.normalization is not None
            else None
        )
    else:
        kind = str(spec.kind)
        channels = [kind]
        normalization = None
    payload = np.ascontiguousarray(spec.data, dtype=SPEC_DTYPE)
    header = {
        "format": SPEC_FORMAT,
        "dims": list(payload.shape),
        "frame_rate": spec.frame_rate,
        "bin_spacing": spec.bin_spacing,
        "first_bin": spec.first_bin,
        "kind": kind,
        "channels": channels,
        "normalization": normalization,
    }
    write_framed_file(path, SPEC_MAGIC, header, [payload.tobytes()])


def load_spectrogram(path) -> Spectrogram | ThreeChannelSpectrogram:
    header, payload = read_framed_file(path, SPEC_MAGIC)
    if header.get("format") != SPEC_FORMAT:
        raise SessionFormatError(f"{path}: unsupported spectrogram format {header.get('format')!r}")
    try:
        dims = tuple(int(d) for d in header.get("dims", ()))
        frame_rate = float(header["frame_rate"])
        bin_spacing = float(header["bin_spacing"])
        first_bin = int(header.get("first_bin", 0))
        kind = header["kind"]
        norm = header.get("normalization")
        record = None
        if norm is not None:
            record = tuple(ChannelNormalization(float(n["mean"]), float(n["std"])) for n in norm)
    except (KeyError, TypeError, ValueError) as exc:
        raise SessionFormatError(f"{path}: malformed spectrogram header ({exc!r})") from exc

    expected = SPEC_DTYPE.itemsize * int(np.prod(dims)) if dims else 0
    if len(payload) != expected:
        raise SessionFormatError(
            f"{path}: dimension mismatch, payload has {len(payload)} bytes, dims {dims} need {expected}"
        )
    data = np.frombuffer(payload, dtype=SPEC_DTYPE).reshape(dims).astype(np.float32)
    if kind == "three_channel":
        return ThreeChannelSpectrogram(data, frame_rate, bin_spacing, first_bin, record)
    try:
        return Spectrogram(data, frame_rate, bin_spacing, SpectrogramKind(kind), first_bin)
    except ValueError as exc:
        raise SessionFormatError(f"{path}: {exc}") from exc
