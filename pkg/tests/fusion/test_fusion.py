import unittest

import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from src.fusion.desaturation import SpO2Features
from src.fusion.fusion import FusionParams, counted_detections, fuse_score, fuse_session
from src.session.model import SpO2Trace
from tests._pipeline_test_utils import add_dip, det, flat_trace


class FuseScoreTests(unittest.TestCase):
    def setUp(self):
        self.params = FusionParams()

    def test_increase_branch(self):
        self.assertEqual(fuse_score(0.6, SpO2Features(5.0, 0.0), self.params), pytest.approx(0.8))

    def test_decrease_branch(self):
        self.assertEqual(fuse_score(0.6, SpO2Features(1.0, 1.0), self.params), pytest.approx(0.36))

    def test_unchanged_between_thresholds(self):
        self.assertEqual(fuse_score(0.6, SpO2Features(3.0, 3.0), self.params), 0.6)

    def test_rise_alone_triggers_increase(self):
        self.assertEqual(fuse_score(0.2, SpO2Features(0.0, 4.0), self.params), pytest.approx(0.6))

    def test_thresholds_must_be_ordered(self):
        with self.assertRaises(ValidationError):
            FusionParams(t1=2.0, t2=2.0)
        with self.assertRaises(ValidationError):
            FusionParams(alpha=1.5)


features = st.builds(SpO2Features, st.floats(0.0, 20.0), st.floats(0.0, 20.0))
unit = st.floats(0.0, 1.0)


@given(p=unit, q=unit, feats=features, alpha=unit, beta=unit)
def test_monotone_and_bounded(p, q, feats, alpha, beta):
    params = FusionParams(alpha=alpha, beta=beta)
    lo, hi = sorted((p, q))
    assert 0.0 <= fuse_score(lo, feats, params) <= 1.0
    assert fuse_score(lo, feats, params) <= fuse_score(hi, feats, params)


class FuseSessionTests(unittest.TestCase):
    def test_empty(self):
        self.assertEqual(fuse_session([], SpO2Trace(flat_trace(60))), [])

    def test_desaturation_raises_and_flat_trace_lowers(self):
        samples = add_dip(flat_trace(900), 225, 5.0)
        trace = SpO2Trace(samples)
        apnea = det("OA", 0.55, 200.0, 230.0)
        artifact = det("CA", 0.7, 600.0, 625.0)
        fused = fuse_session([apnea, artifact], trace)

        self.assertGreater(fused[0].detection.score, 0.55)
        self.assertEqual(fused[0].detection.score, pytest.approx(0.775))
        self.assertTrue(fused[0].counted)
        self.assertEqual(fused[0].radar_score, 0.55)
        self.assertEqual(fused[0].features.p_d, pytest.approx(5.0))

        self.assertLess(fused[1].detection.score, 0.7)
        self.assertFalse(fused[1].counted)
        self.assertEqual(fused[1].detection.t_start, 600.0)
        self.assertEqual(counted_detections(fused), [fused[0].detection])

    def test_decision_threshold_is_configurable(self):
        trace = SpO2Trace(flat_trace(300))
        fused = fuse_session([det("H", 0.7, 10.0, 30.0)], trace, FusionParams(decision_threshold=0.4))
        self.assertEqual(fused[0].detection.score, pytest.approx(0.42))
        self.assertTrue(fused[0].counted)


if __name__ == "__main__":
    unittest.main()
