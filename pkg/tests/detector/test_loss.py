import unittest

import numpy as np
import torch

from src.detector.loss import detection_loss
from src.detector.network import RasaRCNN
from src.detector.targets import assign_roi_targets, build_targets, compute_loss, sample_anchor_labels
from src.errors import NumericError
from tests._pipeline_test_utils import tiny_architecture


def _batch(seed: int = 0):
    generator = torch.Generator().manual_seed(seed)
    n_anchors, n_rois = 12, 6
    return {
        "spn_logits": torch.randn(n_anchors, generator=generator, dtype=torch.float64),
        "spn_deltas": torch.randn(n_anchors, 2, generator=generator, dtype=torch.float64),
        "anchor_labels": torch.tensor([1, 0, -1, 0, 1, 0, 0, -1, 0, 1, 0, 0]),
        "anchor_targets": torch.randn(n_anchors, 2, generator=generator, dtype=torch.float64),
        "head_logits": torch.randn(n_rois, 5, generator=generator, dtype=torch.float64),
        "head_deltas": torch.randn(n_rois, 2, generator=generator, dtype=torch.float64),
        "roi_labels": torch.tensor([0, 1, 2, 0, 4, 3]),
        "roi_targets": torch.randn(n_rois, 2, generator=generator, dtype=torch.float64),
    }


class DetectionLossTests(unittest.TestCase):
    def test_perfect_predictions(self):
        batch = _batch()
        labels = batch["anchor_labels"]
        batch["spn_logits"] = torch.where(labels == 1, 50.0, -50.0).double()
        batch["spn_deltas"] = batch["anchor_targets"].clone()
        batch["head_logits"] = 60.0 * torch.nn.functional.one_hot(batch["roi_labels"], 5).double()
        batch["head_deltas"] = batch["roi_targets"].clone()
        terms = detection_loss(**batch)
        self.assertEqual(float(terms.spn_reg), 0.0)
        self.assertEqual(float(terms.head_reg), 0.0)
        self.assertLess(float(terms.spn_cls), 1e-12)
        self.assertLess(float(terms.head_cls), 1e-12)

    def test_equal_class_weights_match_unweighted(self):
        batch = _batch(1)
        plain = detection_loss(**batch)
        weighted = detection_loss(**batch, class_weights=torch.full((5,), 2.5, dtype=torch.float64))
        self.assertAlmostEqual(float(plain.total), float(weighted.total), delta=1e-9)

    def test_class_weights_change_the_loss(self):
        batch = _batch(2)
        plain = detection_loss(**batch)
        weighted = detection_loss(**batch, class_weights=torch.tensor([1.0, 5.0, 1.0, 1.0, 1.0], dtype=torch.float64))
        self.assertNotAlmostEqual(float(plain.head_cls), float(weighted.head_cls))

    def test_no_positives_gives_zero_regression(self):
        batch = _batch(3)
        batch["anchor_labels"] = torch.zeros(12, dtype=torch.int64)
        batch["roi_labels"] = torch.zeros(6, dtype=torch.int64)
        terms = detection_loss(**batch)
        self.assertEqual(float(terms.spn_reg), 0.0)
        self.assertEqual(float(terms.head_reg), 0.0)

    def test_non_finite_loss_is_reported(self):
        batch = _batch(4)
        batch["spn_deltas"][0, 0] = float("nan")
        with self.assertRaises(NumericError) as ctx:
            detection_loss(**batch)
        self.assertIn("loss_spn_reg", ctx.exception.terms)
        self.assertIn("non-finite", str(ctx.exception))


class SamplingTests(unittest.TestCase):
    def test_anchor_sampling_respects_budget(self):
        labels = np.array([1] * 10 + [0] * 100 + [-1] * 5)
        sampled = sample_anchor_labels(labels, 32, 0.25, np.random.default_rng(0))
        self.assertEqual(int((sampled == 1).sum()), 8)
        self.assertEqual(int((sampled == 0).sum()), 24)
        self.assertTrue(np.all(labels[sampled == 1] == 1))

    def test_ground_truth_joins_roi_pool(self):
        rois, labels, targets = assign_roi_targets(
            np.zeros((0, 2)), np.array([[10.0, 40.0]]), np.array([3]), 0.5, 16, 0.25, np.random.default_rng(0)
        )
        np.testing.assert_array_equal(rois, [[10.0, 40.0]])
        self.assertEqual(labels.tolist(), [3])
        np.testing.assert_allclose(targets, [[0.0, 0.0]])


class GradientCheckTests(unittest.TestCase):
    """Autograd against central differences on a tiny double-precision model."""

    def test_loss_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        model = RasaRCNN(tiny_architecture()).double()
        x = torch.randn(1, 3, 32, 64, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        gt_segments = [np.array([[10.0, 32.0], [40.0, 58.0]])]
        gt_labels = [np.array([2, 4])]
        weights = torch.tensor([1.0, 0.5, 1.5, 2.0, 1.0], dtype=torch.float64)

        with torch.no_grad():
            features = model.backbone_forward(x)
            logits, deltas = model.spn_forward(features)
        targets = build_targets(model, features, logits, deltas, gt_segments, gt_labels, np.random.default_rng(2), 64)

        def loss_value() -> torch.Tensor:
            feats = model.backbone_forward(x)
            lg, dl = model.spn_forward(feats)
            return compute_loss(model, feats, lg, dl, targets, weights).total

        model.zero_grad()
        loss_value().backward()

        rng = np.random.default_rng(3)
        eps = 1e-6
        checked = 0
        for name in ("stem.weight", "stages.1.conv1.weight", "lateral.0.bias", "smooth.2.weight",
                     "spn_cls.weight", "spn_reg.bias", "fc1.weight", "cls_score.weight", "seg_pred.bias"):
            param = dict(model.named_parameters())[name]
            flat = param.data.view(-1)
            for index in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                original = float(flat[index])
                with torch.no_grad():
                    flat[index] = original + eps
                    upper = float(loss_value())
                    flat[index] = original - eps
                    lower = float(loss_value())
                    flat[index] = original
                numeric = (upper - lower) / (2 * eps)
                analytic = float(param.grad.view(-1)[index])
                self.assertLessEqual(abs(analytic - numeric), 1e-4 * abs(numeric) + 1e-8, f"{name}[{index}]")
                checked += 1
        self.assertGreater(checked, 20)


if __name__ == "__main__":
    unittest.main()
