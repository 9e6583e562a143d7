# src/session/store.py
"""
On-disk session container and the shared framed-binary format.

A session directory holds:

    manifest.json   id, duration, radar block, TST, SpO2 rate, file table
    beat.c64        row-major [chirp][sample], interleaved little-endian f32 I/Q
    spo2.csv        header ``t_s,spo2_pct``
    events.jsonl    one ``{"type", "t_start_s", "t_end_s"}`` object per line

Framed binaries (``.spec`` spectrograms and ``model.bin``) share one layout:
4-byte magic, little-endian u32 header length, UTF-8 JSON header, payload.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import threading
from collections.abc import Iterable
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import DataError, SessionFormatError
from src.session.model import (
    BeatMatrix,
    DetectedSegment,
    EventAnnotation,
    RadarConfig,
    SleepSession,
    SpO2Trace,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BEAT_NAME = "beat.c64"
SPO2_NAME = "spo2.csv"
EVENTS_NAME = "events.jsonl"
BEAT_DTYPE = np.dtype("<c8")

_io_lock = threading.RLock()


# ---------------------------------------------------------------------------
# Pydantic models: JSON boundaries
# ---------------------------------------------------------------------------

class RadarManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start_frequency_hz: float = Field(gt=0)
    sweep_bandwidth_hz: float = Field(gt=0)
    frame_rate_hz: float = Field(gt=0)
    samples_per_chirp: int = Field(gt=0)

    @classmethod
    def from_config(cls, config: RadarConfig) -> "RadarManifest":
        return cls(
            start_frequency_hz=config.start_frequency,
            sweep_bandwidth_hz=config.sweep_bandwidth,
            frame_rate_hz=config.frame_rate,
            samples_per_chirp=config.samples_per_chirp,
        )

    def to_config(self) -> RadarConfig:
        return RadarConfig(
            start_frequency=self.start_frequency_hz,
            sweep_bandwidth=self.sweep_bandwidth_hz,
            frame_rate=self.frame_rate_hz,
            samples_per_chirp=self.samples_per_chirp,
        )


class ManifestFiles(BaseModel):
    beat: str | None = None
    spo2: str = SPO2_NAME
    events: str = EVENTS_NAME
    spectrogram: str | None = None
    trace: str | None = None


class SessionManifest(BaseModel):
    id: str
    duration_s: float = Field(gt=0)
    radar: RadarManifest = Field(default_factory=lambda: RadarManifest.from_config(RadarConfig()))
    tst_h: float = Field(gt=0)
    spo2_rate_hz: float = Field(default=1.0, gt=0)
    files: ManifestFiles = Field(default_factory=ManifestFiles)


class SegmentRecord(BaseModel):
    """One line of events.jsonl / detections.jsonl."""

    model_config = ConfigDict(extra="forbid")

    type: str
    t_start_s: float
    t_end_s: float
    score: float | None = None

    @classmethod
    def from_segment(cls, segment: EventAnnotation | DetectedSegment) -> "SegmentRecord":
        score = segment.score if isinstance(segment, DetectedSegment) else None
        return cls(
            type=str(segment.category),
            t_start_s=float(segment.t_start),
            t_end_s=float(segment.t_end),
            score=score,
        )


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, write_fn) -> None:
    path = Path(path)
    with _io_lock:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = path.with_name(f".{path.name}.{os.getpid()}.tmp")
        try:
            with open(tmp_path, "wb") as f:
                write_fn(f)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, path)
        finally:
            if tmp_path.exists():
                try:
                    tmp_path.unlink()
                except OSError:
                    pass


def write_bytes(path, payload: bytes) -> None:
    _atomic_write(Path(path), lambda f: f.write(payload))


def write_json(path, payload) -> None:
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    encoded = (json.dumps(data, indent=2, sort_keys=False) + "\n").encode("utf-8")
    _atomic_write(Path(path), lambda f: f.write(encoded))


def read_json(path, model: type[BaseModel] | None = None):
    """Read a JSON file, validating through *model* when given.

    Raises SessionFormatError on unreadable or schema-invalid files; callers
    that tolerate missing files check existence first.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SessionFormatError(f"cannot read JSON from {path}: {exc}") from exc
    if model is None:
        return data
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise SessionFormatError(f"{path} does not match {model.__name__}: {exc}") from exc


# ---------------------------------------------------------------------------
# Framed binaries
# ---------------------------------------------------------------------------

_FRAME_LENGTH = struct.Struct("<I")


def write_framed_file(path, magic: bytes, header: dict, chunks: Iterable[bytes]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    def _write(f):
        f.write(magic)
        f.write(_FRAME_LENGTH.pack(len(header_bytes)))
        f.write(header_bytes)
        for chunk in chunks:
            f.write(chunk)

    _atomic_write(Path(path), _write)


def read_framed_file(path, magic: bytes) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    raw = path.read_bytes()
    prefix = len(magic) + _FRAME_LENGTH.size
    if len(raw) < prefix or raw[: len(magic)] != magic:
        raise SessionFormatError(f"{path} is not a {magic.decode('ascii', 'replace')} file")
    (header_len,) = _FRAME_LENGTH.unpack_from(raw, len(magic))
    if len(raw) < prefix + header_len:
        raise SessionFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[prefix : prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SessionFormatError(f"{path}: malformed header: {exc}") from exc
    return header, raw[prefix + header_len :]


# ---------------------------------------------------------------------------
# Segment files
# ---------------------------------------------------------------------------

def write_segments(path, segments: Iterable[EventAnnotation | DetectedSegment]) -> None:
    lines = [
        json.dumps(SegmentRecord.from_segment(s).model_dump(exclude_none=True)) + "\n"
        for s in segments
    ]
    payload = "".join(lines).encode("utf-8")
    _atomic_write(Path(path), lambda f: f.write(payload))


def read_segments(path, detections: bool = False) -> list:
    """Read events.jsonl (EventAnnotation) or detections.jsonl (DetectedSegment)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing segment file: {path}")
    segments = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = SegmentRecord.model_validate_json(line)
            except ValidationError as exc:
                raise SessionFormatError(f"{path}:{line_no}: {exc}") from exc
            if detections:
                if record.score is None:
                    raise SessionFormatError(f"{path}:{line_no}: detection without score")
                segments.append(
                    DetectedSegment(record.type, record.score, record.t_start_s, record.t_end_s)
                )
            else:
                segments.append(EventAnnotation(record.type, record.t_start_s, record.t_end_s))
    return segments


# ---------------------------------------------------------------------------
# Session container
# ---------------------------------------------------------------------------

def _write_spo2(path: Path, trace: SpO2Trace) -> None:
    frame = pd.DataFrame({
        "t_s": np.arange(len(trace), dtype=np.float64) / trace.sample_rate,
        "spo2_pct": trace.samples,
    })
    payload = frame.to_csv(index=False, lineterminator="\n").encode("utf-8")
    _atomic_write(path, lambda f: f.write(payload))


def _read_spo2(path: Path, sample_rate: float) -> SpO2Trace:
    if not path.exists():
        raise SessionFormatError(f"missing SpO2 file: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise SessionFormatError(f"cannot parse {path}: {exc}") from exc
    if list(frame.columns) != ["t_s", "spo2_pct"]:
        raise SessionFormatError(f"{path}: expected header t_s,spo2_pct, got {','.join(frame.columns)}")
    return SpO2Trace(frame["spo2_pct"].to_numpy(dtype=np.float64), sample_rate)


def _write_beat(path: Path, beat: BeatMatrix) -> None:
    data = np.ascontiguousarray(beat.data, dtype=BEAT_DTYPE)
    _atomic_write(path, data.tofile)


def _read_beat(path: Path, config: RadarConfig, n_chirps: int, mmap: bool) -> BeatMatrix:
    expected = BEAT_DTYPE.itemsize * n_chirps * config.samples_per_chirp
    actual = path.stat().st_size
    if actual != expected:
        raise SessionFormatError(
            f"{path}: dimension mismatch, {actual} bytes on disk but "
            f"{n_chirps} chirps x {config.samples_per_chirp} samples needs {expected}"
        )
    shape = (n_chirps, config.samples_per_chirp)
    if mmap:
        data = np.memmap(path, dtype=BEAT_DTYPE, mode="r", shape=shape)
    else:
        data = np.fromfile(path, dtype=BEAT_DTYPE).reshape(shape)
    return BeatMatrix(data, config)


def save_session(session: SleepSession, directory, extra_files: dict[str, str] | None = None) -> Path:
    """Write *session* into *directory*; returns the directory path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    radar = session.beat.config if session.beat is not None else RadarConfig()

    files = ManifestFiles(beat=BEAT_NAME if session.beat is not None else None, **(extra_files or {}))
    manifest = SessionManifest(
        id=session.id,
        duration_s=session.duration_s,
        radar=RadarManifest.from_config(radar),
        tst_h=session.tst,
        spo2_rate_hz=session.spo2.sample_rate,
        files=files,
    )

    if session.beat is not None:
        _write_beat(directory / BEAT_NAME, session.beat)
    _write_spo2(directory / files.spo2, session.spo2)
    write_segments(directory / files.events, session.events)
    write_json(directory / MANIFEST_NAME, manifest)
    logger.debug("Saved session %s to %s", session.id, directory)
    return directory


def load_manifest(directory) -> SessionManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise SessionFormatError(f"missing manifest: {path}")
    return read_json(path, SessionManifest)


def load_session(directory, mmap: bool = True, with_beat: bool = True) -> SleepSession:
    """Load and re-validate a session directory written by save_session."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    config = manifest.radar.to_config()

    beat = None
    if with_beat and manifest.files.beat:
        beat_path = directory / manifest.files.beat
        if beat_path.exists():
            n_chirps = int(round(manifest.duration_s * config.frame_rate))
            beat = _read_beat(beat_path, config, n_chirps, mmap)
        else:
            logger.warning("Session %s lists %s but the file is absent; loading without beat data.",
                           manifest.id, beat_path)

    spo2 = _read_spo2(directory / manifest.files.spo2, manifest.spo2_rate_hz)
    events = read_segments(directory / manifest.files.events)
    try:
        return SleepSession(
            id=manifest.id,
            spo2=spo2,
            tst=manifest.tst_h,
            duration_s=manifest.duration_s,
            events=tuple(events),
            beat=beat,
        )
    except DataError:
        raise
    except ValueError as exc:
        raise SessionFormatError(f"{directory}: {exc}") from exc


def list_session_dirs(cohort_dir) -> list[Path]:
    """Session directories directly under *cohort_dir*, sorted by name."""
    cohort_dir = Path(cohort_dir)
    if not cohort_dir.is_dir():
        raise FileNotFoundError(f"cohort directory not found: {cohort_dir}")
    return sorted(p for p in cohort_dir.iterdir() if (p / MANIFEST_NAME).exists())
