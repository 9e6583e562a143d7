# src/simulation/schedule.py
import logging
import math

import numpy as np

from src.errors import ScheduleError
from src.session.model import EVENT_CATEGORIES, EventAnnotation
from src.simulation.config import CohortConfig

logger = logging.getLogger(__name__)


def max_event_count(config: CohortConfig) -> int:
    """Largest number of minimum-length events the night holds at the configured gap."""
    shortest = config.event_duration_s[0]
    return int(math.floor((config.duration_s + config.min_gap_s) / (shortest + config.min_gap_s) + 1e-9))


def generate_event_schedule(config: CohortConfig, subject_ahi: float, rng: np.random.Generator) -> list[EventAnnotation]:
    """Sorted, non-overlapping events: round(AHI x hours) of them, gaps >= min_gap_s.

    Durations are uniform in the configured range, with the upper bound
    shrunk to what the night can hold once every gap is reserved.
    """
    if not math.isfinite(subject_ahi) or subject_ahi < 0:
        raise ScheduleError(f"subject AHI must be >= 0, got {subject_ahi}")
    count = int(math.floor(subject_ahi * config.duration_h + 0.5))
    if count == 0:
        return []

    shortest, longest = config.event_duration_s
    gap = config.min_gap_s
    available = config.duration_s - (count - 1) * gap
    if count * shortest > available + 1e-9:
        raise ScheduleError(
            f"{count} events of >= {shortest:g} s with {gap:g} s gaps do not fit a "
            f"{config.duration_s:g} s recording (AHI {subject_ahi:g})"
        )

    upper = max(shortest, min(longest, available / count))
    durations = rng.uniform(shortest, upper, size=count) if upper > shortest else np.full(count, shortest)
    slack = max(available - float(durations.sum()), 0.0)
    offsets = np.sort(rng.uniform(0.0, slack, size=count))
    categories = rng.choice(len(EVENT_CATEGORIES), size=count, p=config.event_mix.probabilities())

    events = []
    elapsed = 0.0
    for i in range(count):
        start = float(offsets[i]) + elapsed + i * gap
        end = min(start + float(durations[i]), config.duration_s)
        events.append(EventAnnotation(EVENT_CATEGORIES[int(categories[i])], start, end))
        elapsed += float(durations[i])
    logger.debug("Scheduled %d events for AHI %.2f", count, subject_ahi)
    return events


def generate_artifacts(config: CohortConfig, rng: np.random.Generator) -> list[tuple[float, float]]:
    """Movement-artifact intervals: Poisson count at the configured hourly rate, uniform placement."""
    length = config.radar.artifact_duration_s
    if config.artifact_rate_per_h <= 0 or length >= config.duration_s:
        return []
    count = int(rng.poisson(config.artifact_rate_per_h * config.duration_h))
    starts = np.sort(rng.uniform(0.0, config.duration_s - length, size=count))
    return [(float(s), float(s) + length) for s in starts]
