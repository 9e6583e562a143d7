# src/simulation/spo2_sim.py
import numpy as np

from src.session.model import EventAnnotation, EventCategory, SpO2Trace
from src.simulation.config import CohortConfig


def plan_desaturations(schedule: list[EventAnnotation], config: CohortConfig, rng: np.random.Generator) -> list[float]:
    """Depth (percentage points) per event; a share of CAs desaturate by 0."""
    model = config.spo2
    depths = []
    for event in schedule:
        depth = model.depth_for(event.category, event.duration)
        if event.category is EventCategory.CA and rng.random() < model.silent_ca_fraction:
            depth = 0.0
        depths.append(float(depth))
    return depths


def desaturation_curve(t: np.ndarray, event: EventAnnotation, depth: float, config: CohortConfig) -> np.ndarray:
    """Dip below baseline caused by one event: exponential fall over the event, then recovery."""
    model = config.spo2
    onset = event.t_start + model.delay_s
    fall = event.duration
    nadir_time = onset + fall
    tau_fall = fall / 3.0
    dip = np.zeros_like(t, dtype=np.float64)
    if depth <= 0:
        return dip

    falling = (t > onset) & (t <= nadir_time)
    dip[falling] = depth * (1.0 - np.exp(-(t[falling] - onset) / tau_fall)) / (1.0 - np.exp(-fall / tau_fall))
    recovering = t > nadir_time
    dip[recovering] = depth * np.exp(-(t[recovering] - nadir_time) / model.recovery_tau_s)
    return dip


def synthesize_spo2(
    schedule: list[EventAnnotation],
    config: CohortConfig,
    rng: np.random.Generator,
    depths: list[float] | None = None,
) -> SpO2Trace:
    model = config.spo2
    if depths is None:
        depths = plan_desaturations(schedule, config, rng)
    n = int(round(config.duration_s * model.sample_rate_hz))
    t = np.arange(n, dtype=np.float64) / model.sample_rate_hz

    trace = np.full(n, model.baseline_pct, dtype=np.float64)
    for event, depth in zip(schedule, depths):
        trace -= desaturation_curve(t, event, depth, config)
    if model.noise_sigma_pct > 0:
        trace += rng.normal(0.0, model.noise_sigma_pct, size=n)
    np.clip(trace, 0.0, 100.0, out=trace)
    return SpO2Trace(trace, model.sample_rate_hz)
