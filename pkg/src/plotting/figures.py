# src/plotting/figures.py
"""
SVG figures: channel heatmaps with event overlays, detection timelines,
AHI scatter and Bland-Altman plots.

Every segment / reference line gets a stable ``gid`` so the SVG carries
``id="gt-3"``-style hooks; the hash salt and a null date keep re-renders
byte-identical.
"""
from __future__ import annotations

import io
import logging
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from src.dsp.spectrogram import CHANNEL_ORDER, ThreeChannelSpectrogram  # noqa: E402
from src.metrics.agreement import bland_altman  # noqa: E402
from src.session.model import DetectedSegment, EventAnnotation, EventCategory  # noqa: E402
from src.session.store import write_bytes  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "rosa"

PLOT_KINDS = ("spectrogram", "timeline", "scatter", "bland_altman")
CATEGORY_COLORS = {
    EventCategory.CA: "#1f77b4",
    EventCategory.OA: "#d62728",
    EventCategory.MA: "#9467bd",
    EventCategory.H: "#2ca02c",
}


def build_spectrogram_figure(spec: ThreeChannelSpectrogram, events: Sequence[EventAnnotation] = ()) -> Figure:
    fig = Figure(figsize=(12, 7))
    axes = fig.subplots(3, 1, sharex=True)
    duration = spec.data.shape[-1] / spec.frame_rate
    lo_range = spec.first_bin * spec.bin_spacing
    hi_range = (spec.first_bin + spec.data.shape[1]) * spec.bin_spacing
    for channel, (ax, kind) in enumerate(zip(axes, CHANNEL_ORDER)):
        image = ax.imshow(
            spec.data[channel],
            aspect="auto",
            origin="lower",
            extent=(0.0, duration, lo_range, hi_range),
            cmap="viridis",
            interpolation="nearest",
        )
        image.set_gid(f"channel-{kind}")
        ax.set_ylabel(f"{kind}\nrange (m)")
        for i, event in enumerate(events):
            span = ax.axvspan(event.t_start, event.t_end, color=CATEGORY_COLORS[event.category], alpha=0.25)
            span.set_gid(f"gt-{kind}-{i}")
    axes[-1].set_xlabel("time (s)")
    return fig


def _segment_row(ax, segments, y: float, prefix: str) -> None:
    for i, segment in enumerate(segments):
        patch = Rectangle(
            (segment.t_start, y - 0.35),
            segment.t_end - segment.t_start,
            0.7,
            color=CATEGORY_COLORS[segment.category],
            alpha=0.85,
        )
        patch.set_gid(f"{prefix}-{i}")
        ax.add_patch(patch)


def build_timeline_figure(
    events: Sequence[EventAnnotation],
    detections: Sequence[DetectedSegment],
    duration_s: float,
    title: str | None = None,
) -> Figure:
    """Ground truth on the upper row, detections below; one glyph per segment."""
    fig = Figure(figsize=(12, 2.5))
    ax = fig.add_subplot(1, 1, 1)
    _segment_row(ax, events, 1.0, "gt")
    _segment_row(ax, detections, 0.0, "det")
    ax.set_xlim(0.0, duration_s)
    ax.set_ylim(-0.6, 1.6)
    ax.set_yticks([0.0, 1.0], labels=["detected", "truth"])
    ax.set_xlabel("time (s)")
    if title:
        ax.set_title(title)
    return fig


def build_scatter_figure(true_ahi: Sequence[float], estimated_ahi: Sequence[float], title: str | None = None) -> Figure:
    truth = np.asarray(true_ahi, dtype=np.float64)
    estimate = np.asarray(estimated_ahi, dtype=np.float64)
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(1, 1, 1)
    top = float(max(truth.max(initial=0.0), estimate.max(initial=0.0), 1.0)) * 1.05
    (identity,) = ax.plot([0.0, top], [0.0, top], color="grey", linestyle="--", linewidth=1)
    identity.set_gid("identity")
    points = ax.scatter(truth, estimate, s=18, color="#1f77b4")
    points.set_gid("points")
    ax.set_xlim(0.0, top)
    ax.set_ylim(0.0, top)
    ax.set_xlabel("reference AHI (events/h)")
    ax.set_ylabel("estimated AHI (events/h)")
    if title:
        ax.set_title(title)
    return fig


def build_bland_altman_figure(
    true_ahi: Sequence[float], estimated_ahi: Sequence[float], title: str | None = None
) -> Figure:
    truth = np.asarray(true_ahi, dtype=np.float64)
    estimate = np.asarray(estimated_ahi, dtype=np.float64)
    stats = bland_altman(np.column_stack([truth, estimate]))
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    points = ax.scatter((truth + estimate) / 2.0, estimate - truth, s=18, color="#1f77b4")
    points.set_gid("points")
    for gid, value, style in (
        ("bias", stats.bias, "-"),
        ("loa-lower", stats.loa_lower, "--"),
        ("loa-upper", stats.loa_upper, "--"),
    ):
        ax.axhline(value, color="black", linestyle=style, linewidth=1).set_gid(gid)
    ax.set_xlabel("mean of reference and estimate (events/h)")
    ax.set_ylabel("estimate - reference (events/h)")
    if title:
        ax.set_title(title)
    return fig


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    payload = buffer.getvalue()
    write_bytes(path, payload)
    logger.info("Wrote %s", path)
    return path
