import unittest

import numpy as np
import torch

from src.detector.anchors import AnchorTable
from src.detector.network import CLASS_NAMES, RasaRCNN, receptive_margin
from src.detector.proposals import as_proposals, propose
from src.errors import DataError
from tests._pipeline_test_utils import tiny_architecture


def _model(seed: int = 0, **overrides) -> RasaRCNN:
    torch.manual_seed(seed)
    return RasaRCNN(tiny_architecture(**overrides)).double().eval()


def _input(n_frames: int, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(1, 3, 32, n_frames, dtype=torch.float64, generator=generator)


class BackboneTests(unittest.TestCase):
    def test_pyramid_lengths_for_half_hour(self):
        with torch.no_grad():
            levels = _model().backbone_forward(_input(1800))
        self.assertEqual([level.shape[-1] for level in levels], [450, 225, 112])
        self.assertTrue(all(level.shape[1] == 4 for level in levels))

    def test_zero_input_with_zero_bias(self):
        model = _model()
        with torch.no_grad():
            for name, param in model.named_parameters():
                if name.endswith("bias"):
                    param.zero_()
            levels = model.backbone_forward(torch.zeros(1, 3, 32, 128, dtype=torch.float64))
        for level in levels:
            self.assertFalse(torch.any(level != 0))

    def test_receptive_field(self):
        model = _model(1)
        x = _input(1800, seed=1)
        y = x.clone()
        y[..., 1000] += 1.0
        with torch.no_grad():
            a = model.backbone_forward(x)[0][0]
            b = model.backbone_forward(y)[0][0]
        changed = torch.nonzero((a - b).abs().amax(dim=0) > 1e-9).flatten().tolist()
        self.assertTrue(changed)
        margin = receptive_margin(model.arch)
        for i in changed:
            self.assertLessEqual(4 * i - margin, 1000)
            self.assertGreaterEqual(4 * i + 3 + margin, 1000)
        self.assertIn(250, range(min(changed), max(changed) + 1))

    def test_input_checks(self):
        model = _model()
        with self.assertRaises(DataError):
            model.backbone_forward(torch.zeros(1, 2, 32, 128, dtype=torch.float64))
        with self.assertRaises(DataError):
            model.backbone_forward(torch.zeros(1, 3, 16, 128, dtype=torch.float64))
        with self.assertRaises(DataError):
            model.backbone_forward(torch.zeros(1, 3, 32, 40, dtype=torch.float64))


class ProposalTests(unittest.TestCase):
    def setUp(self):
        self.anchors = AnchorTable.build([16, 8, 4], [4, 8, 16], [15.0, 30.0, 60.0, 120.0])
        self.n = len(self.anchors)

    def test_zero_logits_give_half_objectness_and_stable_order(self):
        segments, objectness = propose(
            torch.zeros(self.n), torch.zeros(self.n, 2), self.anchors, 64, top_k=self.n, nms_iou=0.7
        )
        self.assertTrue(np.all(objectness == 0.5))
        starts = segments[:, 0]
        self.assertTrue(np.all(np.diff(starts) >= 0))
        for a, b in zip(segments, segments[1:]):
            if a[0] == b[0]:
                self.assertGreaterEqual(a[1] - a[0], b[1] - b[0])

    def test_top_one(self):
        generator = torch.Generator().manual_seed(3)
        logits = torch.randn(self.n, generator=generator, dtype=torch.float64)
        deltas = 0.1 * torch.randn(self.n, 2, generator=generator, dtype=torch.float64)
        segments, objectness = propose(logits, deltas, self.anchors, 64, top_k=1, nms_iou=0.7)
        self.assertEqual(segments.shape, (1, 2))
        j = int(torch.argmax(logits))
        center = self.anchors.centers[j] + float(deltas[j, 0]) * self.anchors.lengths[j]
        length = self.anchors.lengths[j] * float(np.exp(float(deltas[j, 1])))
        expected = np.clip([center - length / 2, center + length / 2], 0.0, 64.0)
        np.testing.assert_allclose(segments[0], expected)
        self.assertAlmostEqual(float(objectness[0]), float(torch.sigmoid(logits[j])))

    def test_negative_start_is_clipped(self):
        segments, _ = propose(torch.zeros(self.n), torch.zeros(self.n, 2), self.anchors, 64, top_k=self.n, nms_iou=1.0)
        self.assertTrue(np.all(segments >= 0.0) and np.all(segments <= 64.0))
        self.assertTrue(any(np.allclose(s, [0.0, 9.5]) for s in segments))
        self.assertEqual(len(as_proposals(segments, np.full(len(segments), 0.5))), len(segments))


class HeadTests(unittest.TestCase):
    def test_zero_weights_give_uniform_scores_and_identity_refinement(self):
        model = _model()
        with torch.no_grad():
            for layer in (model.fc1, model.fc2, model.cls_score, model.seg_pred):
                layer.weight.zero_()
                layer.bias.zero_()
            pooled = torch.randn(6, 4, 8, dtype=torch.float64)
            logits, deltas = model.head_forward(pooled)
        probs = torch.softmax(logits, dim=1)
        torch.testing.assert_close(probs, torch.full((6, len(CLASS_NAMES)), 0.2, dtype=torch.float64))
        self.assertFalse(torch.any(deltas != 0))

    def test_softmax_rows_sum_to_one(self):
        model = _model(2)
        x = _input(300, seed=2)
        with torch.no_grad():
            features = model.backbone_forward(x)
            rois = torch.tensor([[0.0, 0.0, 40.0], [0.0, 100.0, 290.0], [0.0, 5.0, 300.0]], dtype=torch.float64)
            logits, _ = model.head_forward(model.pool(features, rois))
        sums = torch.softmax(logits, dim=1).sum(dim=1)
        torch.testing.assert_close(sums, torch.ones(3, dtype=torch.float64), atol=1e-6, rtol=0)

    def test_roi_levels_follow_length(self):
        model = _model()
        levels = model.roi_levels(torch.tensor([10.0, 31.9, 32.0, 63.0, 64.0, 500.0]))
        self.assertEqual(levels.tolist(), [0, 0, 1, 1, 2, 2])


if __name__ == "__main__":
    unittest.main()
