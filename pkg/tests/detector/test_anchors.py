import math
import unittest

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.detector.anchors import (
    AnchorSegment,
    AnchorTable,
    SegmentDelta,
    decode_segment,
    encode_segment,
    generate_anchors,
    match_anchors,
    pairwise_iou,
)
from src.errors import InvariantError

SCALES = (15.0, 30.0, 60.0, 120.0)


class AnchorGenerationTests(unittest.TestCase):
    def test_count(self):
        self.assertEqual(len(generate_anchors([10], [4], SCALES)), 40)

    def test_coordinate_mapping(self):
        anchors = generate_anchors([10], [4], SCALES)
        anchor = anchors[5 * len(SCALES) + 1]
        self.assertEqual(anchor.center, 22.0)
        self.assertEqual(anchor.length, 30.0)
        self.assertEqual(anchor.scale_id, 1)

    def test_empty_level(self):
        self.assertEqual(generate_anchors([0], [4], SCALES), [])
        self.assertEqual(len(AnchorTable.build([0, 0], [4, 8], SCALES)), 0)

    def test_table_matches_list(self):
        lengths, strides = [6, 3, 1], [4, 8, 16]
        listed = generate_anchors(lengths, strides, SCALES)
        table = AnchorTable.build(lengths, strides, SCALES)
        np.testing.assert_array_equal(table.centers, [a.center for a in listed])
        np.testing.assert_array_equal(table.lengths, [a.length for a in listed])
        np.testing.assert_array_equal(table.levels, [a.level for a in listed])

    def test_frame_rate_scales_lengths(self):
        anchors = generate_anchors([1], [4], [30.0], frame_rate=2.0)
        self.assertEqual(anchors[0].length, 60.0)


class EncodingTests(unittest.TestCase):
    def test_identity(self):
        anchor = AnchorSegment(50.0, 20.0, 0)
        delta = encode_segment((40.0, 60.0), anchor)
        self.assertEqual((delta.d_center, delta.d_log_length), (0.0, 0.0))

    def test_worked_example(self):
        delta = encode_segment((35.0, 75.0), AnchorSegment(50.0, 20.0, 0))
        self.assertAlmostEqual(delta.d_center, 0.25)
        self.assertAlmostEqual(delta.d_log_length, math.log(2.0))

    def test_non_positive_lengths(self):
        with self.assertRaises(InvariantError):
            encode_segment((5.0, 5.0), AnchorSegment(50.0, 20.0, 0))
        with self.assertRaises(InvariantError):
            AnchorSegment(50.0, 0.0, 0)
        with self.assertRaises(InvariantError):
            SegmentDelta(float("nan"), 0.0)


@given(
    start=st.floats(min_value=-500.0, max_value=5000.0),
    length=st.floats(min_value=0.5, max_value=600.0),
    center=st.floats(min_value=0.0, max_value=5000.0),
    anchor_length=st.floats(min_value=1.0, max_value=240.0),
)
def test_decode_inverts_encode(start, length, center, anchor_length):
    anchor = AnchorSegment(center, anchor_length, 0)
    decoded = decode_segment(encode_segment((start, start + length), anchor), anchor)
    assert decoded[0] == pytest.approx(start, rel=1e-9, abs=1e-6)
    assert decoded[1] == pytest.approx(start + length, rel=1e-9, abs=1e-6)


def _oracle_iou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _oracle_match(anchors, gts, pos_iou, neg_iou):
    labels = []
    best_gt = []
    for a in anchors:
        ious = [_oracle_iou(a, g) for g in gts]
        best = max(ious)
        best_gt.append(ious.index(best))
        labels.append(1 if best >= pos_iou else (0 if best < neg_iou else -1))
    for j, g in enumerate(gts):
        column = [_oracle_iou(a, g) for a in anchors]
        top = max(column)
        if top > 0:
            for i, value in enumerate(column):
                if value == top:
                    labels[i] = 1
    return labels, best_gt


def _random_segments(rng, count):
    starts = rng.integers(0, 60, size=count)
    lengths = rng.integers(1, 30, size=count)
    return np.stack([starts, starts + lengths], axis=1).astype(np.float64)


class MatchAnchorsTests(unittest.TestCase):
    def test_identical_anchor_is_positive_with_zero_delta(self):
        match = match_anchors(np.array([[10.0, 40.0], [100.0, 130.0]]), np.array([[10.0, 40.0]]))
        self.assertEqual(match.labels.tolist(), [1, 0])
        np.testing.assert_array_equal(match.targets[0], [0.0, 0.0])

    def test_one_third_overlap_is_ignored(self):
        anchors = np.array([[0.0, 10.0], [5.0, 15.0]])
        gts = np.array([[5.0, 15.0]])
        match = match_anchors(anchors, np.array([[100.0, 110.0]]), pos_iou=0.7, neg_iou=0.3)
        self.assertEqual(match.labels.tolist(), [0, 0])
        self.assertAlmostEqual(float(pairwise_iou(anchors[:1], gts)[0, 0]), 1.0 / 3.0)
        match = match_anchors(np.array([[0.0, 10.0], [5.0, 15.0], [200.0, 210.0]]), gts)
        # the second anchor is the forced match; the first sits in the ignore band
        self.assertEqual(match.labels.tolist(), [-1, 1, 0])

    def test_forced_match_for_poorly_covered_gt(self):
        anchors = np.array([[0.0, 100.0], [300.0, 400.0]])
        match = match_anchors(anchors, np.array([[0.0, 20.0]]))
        self.assertEqual(match.labels.tolist(), [1, 0])

    def test_no_ground_truth_means_all_negative(self):
        match = match_anchors(np.array([[0.0, 10.0], [5.0, 25.0]]), np.zeros((0, 2)))
        self.assertEqual(match.labels.tolist(), [0, 0])

    def test_threshold_order_enforced(self):
        with self.assertRaises(InvariantError):
            match_anchors(np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]), pos_iou=0.3, neg_iou=0.3)

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            anchors = _random_segments(rng, int(rng.integers(1, 9)))
            gts = _random_segments(rng, int(rng.integers(1, 6)))
            match = match_anchors(anchors, gts, 0.7, 0.3)
            labels, best_gt = _oracle_match(anchors.tolist(), gts.tolist(), 0.7, 0.3)
            self.assertEqual(match.labels.tolist(), labels)
            positive = match.labels == 1
            self.assertEqual(match.matched_gt[positive].tolist(), np.asarray(best_gt)[positive].tolist())
            for i in np.flatnonzero(positive):
                a = anchors[i]
                g = gts[best_gt[i]]
                expected = encode_segment(tuple(g), AnchorSegment((a[0] + a[1]) / 2.0, a[1] - a[0], 0))
                np.testing.assert_allclose(match.targets[i], [expected.d_center, expected.d_log_length], atol=1e-12)


if __name__ == "__main__":
    unittest.main()
