# src/simulation/radar_sim.py
"""
Beat-signal synthesis for a single static subject.

Chest displacement d(t) = A(t) * sin(2*pi*f_r*t + phi) phase-modulates a
complex tone sitting at the subject's range bin:

    x[t, n] = a * exp(j * (2*pi*k*n/N + 4*pi*d(t)/lambda + phi0)) + noise

with k = range / range_resolution. A(t) drops to the apnea / hypopnea
amplitude factor inside events (linear ramps at both ends); movement
artifacts add white phase noise for their duration.
"""
import logging

import numpy as np

from src.session.model import APNEA_CATEGORIES, BeatMatrix, EventAnnotation, EventCategory
from src.simulation.config import CohortConfig

logger = logging.getLogger(__name__)

CHUNK_CHIRPS = 4096


def draw_breathing_rate(config: CohortConfig, rng: np.random.Generator) -> float:
    lo, hi = config.radar.breathing_rate_hz
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def amplitude_factor(category: EventCategory, config: CohortConfig) -> float:
    if category in APNEA_CATEGORIES:
        return config.radar.apnea_amplitude_factor
    return config.radar.hypopnea_amplitude_factor


def amplitude_envelope(t: np.ndarray, schedule, config: CohortConfig) -> np.ndarray:
    """Relative breathing amplitude A(t)/A at times *t* (seconds)."""
    envelope = np.ones_like(t, dtype=np.float64)
    ramp = config.radar.ramp_s
    for event in schedule:
        mask = (t >= event.t_start) & (t <= event.t_end)
        if not np.any(mask):
            continue
        target = amplitude_factor(event.category, config)
        edge = min(ramp, event.duration / 2.0)
        knots = [event.t_start, event.t_start + edge, event.t_end - edge, event.t_end]
        envelope[mask] *= np.interp(t[mask], knots, [1.0, target, target, 1.0])
    return envelope


def synthesize_beat(
    schedule: list[EventAnnotation],
    artifacts: list[tuple[float, float]],
    config: CohortConfig,
    rng: np.random.Generator,
    breathing_rate_hz: float | None = None,
) -> BeatMatrix:
    radar = config.radar
    radar_config = radar.to_radar_config()
    fs = radar_config.frame_rate
    n_samples = radar_config.samples_per_chirp
    n_chirps = int(round(config.duration_s * fs))

    if breathing_rate_hz is None:
        breathing_rate_hz = draw_breathing_rate(config, rng)
    breathing_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    carrier_phase = float(rng.uniform(0.0, 2.0 * np.pi))

    # Artifact noise is drawn per interval up front so chunking never changes the stream.
    artifact_noise = []
    for start, end in artifacts:
        lo = max(int(np.floor(start * fs)), 0)
        hi = min(int(np.ceil(end * fs)), n_chirps)
        if hi > lo:
            artifact_noise.append((lo, hi, rng.normal(0.0, radar.artifact_phase_sigma_rad, size=hi - lo)))

    beat_bin = config.subject_range_m / radar_config.range_resolution
    tone = np.exp(2j * np.pi * beat_bin * np.arange(n_samples) / n_samples)
    amplitude = radar.reflection_amplitude
    displacement_m = radar.chest_displacement_mm * 1e-3
    phase_gain = 4.0 * np.pi / radar_config.wavelength

    noise_std = None
    if radar.snr_db is not None:
        noise_std = amplitude / np.sqrt(10.0 ** (radar.snr_db / 10.0)) / np.sqrt(2.0)

    data = np.empty((n_chirps, n_samples), dtype=np.complex64)
    for start in range(0, n_chirps, CHUNK_CHIRPS):
        stop = min(start + CHUNK_CHIRPS, n_chirps)
        t = np.arange(start, stop, dtype=np.float64) / fs
        chest = displacement_m * amplitude_envelope(t, schedule, config) * np.sin(
            2.0 * np.pi * breathing_rate_hz * t + breathing_phase
        )
        phase = phase_gain * chest + carrier_phase
        for lo, hi, noise in artifact_noise:
            a, b = max(lo, start), min(hi, stop)
            if b > a:
                phase[a - start : b - start] += noise[a - lo : b - lo]
        block = amplitude * np.outer(np.exp(1j * phase), tone)
        if noise_std is not None:
            shape = block.shape
            block = block + noise_std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        data[start:stop] = block
    return BeatMatrix(data, radar_config)
