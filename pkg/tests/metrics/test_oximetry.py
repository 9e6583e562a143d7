import unittest

import numpy as np

from src.errors import InvariantError
from src.metrics.oximetry import count_desaturations, odi3
from src.session.model import SpO2Trace
from tests._pipeline_test_utils import add_dip, flat_trace


def _piecewise(knots, length):
    t, v = zip(*knots)
    return SpO2Trace(np.interp(np.arange(length), t, v), 1.0)


class OximetryTests(unittest.TestCase):
    def test_four_dips_over_two_hours(self):
        samples = flat_trace(7200.0)
        for start in (1000, 2500, 4000, 5500):
            samples = add_dip(samples, start, depth=4.0)
        trace = SpO2Trace(samples, 1.0)
        self.assertEqual(count_desaturations(trace), 4)
        self.assertEqual(odi3(trace, 2.0), 2.0)

    def test_shallow_dips_do_not_count(self):
        samples = flat_trace(3600.0)
        for start in (500, 1500, 2500):
            samples = add_dip(samples, start, depth=2.0)
        self.assertEqual(odi3(SpO2Trace(samples, 1.0), 1.0), 0.0)

    def test_flat_trace(self):
        self.assertEqual(odi3(SpO2Trace(flat_trace(600.0), 1.0), 0.5), 0.0)

    def test_partial_recovery_merges_drops(self):
        trace = _piecewise(
            [(0, 97), (100, 97), (110, 94), (120, 94), (125, 94.6), (135, 94.6), (145, 91), (155, 91), (170, 97), (299, 97)],
            300,
        )
        self.assertEqual(count_desaturations(trace), 1)
        self.assertEqual(count_desaturations(trace, recovery_pct=0.5), 2)

    def test_unrecovered_drop_at_end_counts(self):
        trace = _piecewise([(0, 97), (100, 97), (110, 92), (199, 92)], 200)
        self.assertEqual(count_desaturations(trace), 1)

    def test_zero_tst(self):
        with self.assertRaises(InvariantError):
            odi3(SpO2Trace(flat_trace(60.0), 1.0), 0.0)


if __name__ == "__main__":
    unittest.main()
