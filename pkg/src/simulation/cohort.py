# src/simulation/cohort.py
"""
Seeded synthetic cohort generation.

Subject i draws from its own generator tree rooted at SeedSequence([seed, i]),
so running subjects in parallel (or alone) never changes what they contain.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from src.dsp.preprocess import PreprocessParams, preprocess_beat
from src.dsp.spectrogram import save_spectrogram
from src.session.model import SleepSession
from src.session.store import save_session, write_json
from src.simulation.config import CohortConfig
from src.simulation.radar_sim import amplitude_factor, draw_breathing_rate, synthesize_beat
from src.simulation.schedule import generate_artifacts, generate_event_schedule, max_event_count
from src.simulation.spo2_sim import plan_desaturations, synthesize_spo2

logger = logging.getLogger(__name__)

TRACE_NAME = "trace.json"
SPECTROGRAM_NAME = "spectrogram.spec"
COHORT_INDEX_NAME = "cohort.json"


class EventTrace(BaseModel):
    type: str
    t_start_s: float
    t_end_s: float
    amplitude_factor: float
    desaturation_depth_pct: float


class GenerationTrace(BaseModel):
    subject_index: int
    group: str
    drawn_ahi: float
    breathing_rate_hz: float
    chest_displacement_mm: float
    events: list[EventTrace] = Field(default_factory=list)
    artifacts: list[tuple[float, float]] = Field(default_factory=list)


class CohortIndex(BaseModel):
    config: CohortConfig
    subjects: list[str] = Field(default_factory=list)


@dataclass(slots=True)
class SyntheticSession:
    session: SleepSession
    trace: GenerationTrace


def subject_id(index: int) -> str:
    return f"subject_{index:03d}"


def subject_streams(seed: int, index: int) -> list[np.random.Generator]:
    """Independent generators for (schedule, artifacts, beat, spo2) of one subject."""
    children = np.random.SeedSequence([int(seed), int(index)]).spawn(4)
    return [np.random.default_rng(child) for child in children]


def draw_subject_ahi(config: CohortConfig, index: int, rng: np.random.Generator) -> float:
    """Realised AHI = integer event count / hours, inside the subject's group bounds."""
    lo_ahi, hi_ahi = config.group_for(index).bounds
    hours = config.duration_h
    lo = max(int(math.ceil(lo_ahi * hours - 1e-9)), 0)
    hi = min(int(math.floor(hi_ahi * hours + 1e-9)), max_event_count(config))
    if hi < lo:
        count = min(int(math.floor(config.group_for(index).mean * hours + 0.5)), max_event_count(config))
    else:
        count = int(rng.integers(lo, hi + 1))
    return count / hours


def simulate_subject(config: CohortConfig, index: int, with_beat: bool = True) -> SyntheticSession:
    schedule_rng, artifact_rng, beat_rng, spo2_rng = subject_streams(config.seed, index)
    group = config.group_for(index)
    ahi = draw_subject_ahi(config, index, schedule_rng)
    schedule = generate_event_schedule(config, ahi, schedule_rng)
    artifacts = generate_artifacts(config, artifact_rng)

    rate = draw_breathing_rate(config, beat_rng)
    beat = synthesize_beat(schedule, artifacts, config, beat_rng, breathing_rate_hz=rate) if with_beat else None
    depths = plan_desaturations(schedule, config, spo2_rng)
    spo2 = synthesize_spo2(schedule, config, spo2_rng, depths=depths)

    session = SleepSession(
        id=subject_id(index),
        spo2=spo2,
        tst=config.duration_h,
        duration_s=config.duration_s,
        events=tuple(schedule),
        beat=beat,
    )
    trace = GenerationTrace(
        subject_index=index,
        group=group.name,
        drawn_ahi=ahi,
        breathing_rate_hz=rate,
        chest_displacement_mm=config.radar.chest_displacement_mm,
        events=[
            EventTrace(
                type=str(e.category),
                t_start_s=e.t_start,
                t_end_s=e.t_end,
                amplitude_factor=amplitude_factor(e.category, config),
                desaturation_depth_pct=d,
            )
            for e, d in zip(schedule, depths)
        ],
        artifacts=artifacts,
    )
    return SyntheticSession(session=session, trace=trace)


def _write_subject(
    config: CohortConfig,
    index: int,
    out_dir: Path,
    store_beat: bool,
    preprocess_params: PreprocessParams | None,
) -> Path:
    synthetic = simulate_subject(config, index, with_beat=True)
    session = synthetic.session
    directory = out_dir / session.id
    extras = {"trace": TRACE_NAME}
    if not store_beat:
        save_spectrogram(directory / SPECTROGRAM_NAME, preprocess_beat(session.beat, preprocess_params))
        extras["spectrogram"] = SPECTROGRAM_NAME
        session = SleepSession(
            id=session.id,
            spo2=session.spo2,
            tst=session.tst,
            duration_s=session.duration_s,
            events=session.events,
            beat=None,
        )
    save_session(session, directory, extra_files=extras)
    write_json(directory / TRACE_NAME, synthetic.trace)
    return directory


def generate_cohort(
    config: CohortConfig,
    out_dir,
    workers: int = 1,
    store_beat: bool = True,
    preprocess_params: PreprocessParams | None = None,
) -> list[Path]:
    """Simulate and save ``config.n_subjects`` sessions under *out_dir*."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = range(config.n_subjects)
    logger.info("Generating %d synthetic sessions into %s (seed %d)", config.n_subjects, out_dir, config.seed)

    def _job(index: int) -> Path:
        return _write_subject(config, index, out_dir, store_beat, preprocess_params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            directories = list(tqdm(pool.map(_job, indices), total=config.n_subjects, desc="simulate", disable=None))
    else:
        directories = [_job(i) for i in tqdm(indices, desc="simulate", disable=None)]

    write_json(out_dir / COHORT_INDEX_NAME, CohortIndex(config=config, subjects=[d.name for d in directories]))
    return directories
