import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.dsp.spectrogram import CHANNEL_ORDER
from src.errors import DataError
from src.plotting.figures import (
    build_bland_altman_figure,
    build_scatter_figure,
    build_spectrogram_figure,
    build_timeline_figure,
    save_svg,
)
from src.session.model import EventAnnotation
from tests._pipeline_test_utils import det, random_spectrogram

EVENTS = (
    EventAnnotation("OA", 30.0, 50.0),
    EventAnnotation("CA", 100.0, 115.0),
    EventAnnotation("H", 200.0, 230.0),
)
DETECTIONS = (det("OA", 0.9, 31.0, 49.0), det("CA", 0.7, 99.0, 116.0), det("MA", 0.4, 250.0, 262.0))


def _gids(artists):
    return [a.get_gid() for a in artists if a.get_gid()]


class TimelineTests(unittest.TestCase):
    def test_one_glyph_per_segment(self):
        fig = build_timeline_figure(EVENTS, DETECTIONS, 300.0, title="s1")
        (ax,) = fig.axes
        gids = _gids(ax.patches)
        self.assertEqual(len(gids), 6)
        self.assertEqual(sorted(g for g in gids if g.startswith("gt-")), ["gt-0", "gt-1", "gt-2"])
        self.assertEqual(sorted(g for g in gids if g.startswith("det-")), ["det-0", "det-1", "det-2"])

    def test_glyph_extent_matches_segment(self):
        fig = build_timeline_figure(EVENTS, DETECTIONS, 300.0)
        patch = next(p for p in fig.axes[0].patches if p.get_gid() == "det-2")
        self.assertEqual(patch.get_x(), 250.0)
        self.assertEqual(patch.get_width(), 12.0)

    def test_empty_session(self):
        fig = build_timeline_figure((), (), 60.0)
        self.assertEqual(_gids(fig.axes[0].patches), [])


class ScatterTests(unittest.TestCase):
    def test_perfect_agreement_on_identity(self):
        truth = [0.0, 4.0, 12.5, 31.0]
        fig = build_scatter_figure(truth, truth)
        points = next(c for c in fig.axes[0].collections if c.get_gid() == "points")
        offsets = np.asarray(points.get_offsets())
        np.testing.assert_array_equal(offsets[:, 0], offsets[:, 1])
        identity = next(line for line in fig.axes[0].lines if line.get_gid() == "identity")
        np.testing.assert_array_equal(identity.get_xdata(), identity.get_ydata())


class BlandAltmanFigureTests(unittest.TestCase):
    def test_reference_lines_coincide_at_zero(self):
        truth = [3.0, 8.0, 20.0]
        fig = build_bland_altman_figure(truth, truth)
        lines = {line.get_gid(): line for line in fig.axes[0].lines}
        for gid in ("bias", "loa-lower", "loa-upper"):
            np.testing.assert_array_equal(lines[gid].get_ydata(), [0.0, 0.0])

    def test_limits_bracket_the_bias(self):
        fig = build_bland_altman_figure([5.0, 5.0, 10.0], [6.0, 4.0, 11.0])
        lines = {line.get_gid(): line.get_ydata()[0] for line in fig.axes[0].lines}
        self.assertLess(lines["loa-lower"], lines["bias"])
        self.assertLess(lines["bias"], lines["loa-upper"])

    def test_needs_two_subjects(self):
        with self.assertRaises(DataError):
            build_bland_altman_figure([5.0], [6.0])


class SpectrogramFigureTests(unittest.TestCase):
    def test_three_channel_panels(self):
        fig = build_spectrogram_figure(random_spectrogram(300), EVENTS[:2])
        self.assertEqual(len(fig.axes), 3)
        for ax, kind in zip(fig.axes, CHANNEL_ORDER):
            self.assertEqual(_gids(ax.images), [f"channel-{kind}"])
            self.assertEqual(len(_gids(ax.patches)), 2)


class SvgTests(unittest.TestCase):
    def test_rerender_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as tmp:
            a = save_svg(build_timeline_figure(EVENTS, DETECTIONS, 300.0), Path(tmp) / "a" / "timeline.svg")
            b = save_svg(build_timeline_figure(EVENTS, DETECTIONS, 300.0), Path(tmp) / "b" / "timeline.svg")
            payload = a.read_bytes()
            self.assertEqual(payload, b.read_bytes())
            text = payload.decode("utf-8")
            self.assertIn('id="gt-0"', text)
            self.assertIn('id="det-2"', text)


if __name__ == "__main__":
    unittest.main()
