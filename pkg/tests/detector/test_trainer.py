import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from src.detector.checkpoint import MODEL_NAME, load_model
from src.detector.config import TrainConfig
from src.detector.trainer import (
    FOLDS_NAME,
    LOSS_TRACE_NAME,
    TRAIN_LOG_NAME,
    FoldAssignment,
    TrainingSample,
    assign_folds,
    compute_class_weights,
    cosine_learning_rate,
    effective_crop,
    sample_crop,
    train_cross_validation,
    train_model,
)
from src.errors import DataError, DivergenceError, NumericError
from src.session.model import EventAnnotation
from tests._pipeline_test_utils import random_spectrogram, tiny_architecture


def _sample(session_id: str, seed: int, n_frames: int = 320) -> TrainingSample:
    spec = random_spectrogram(n_frames, seed)
    data = spec.data.copy()
    events = []
    rng = np.random.default_rng(seed)
    for k, start in enumerate(range(20, n_frames - 60, 80)):
        length = int(rng.integers(15, 40))
        events.append(EventAnnotation(("CA", "OA", "MA", "H")[(k + seed) % 4], float(start), float(start + length)))
        data[1, :, start : start + length] -= 3.0
    spec = type(spec)(data=data, frame_rate=1.0, bin_spacing=0.05, first_bin=4)
    return TrainingSample.from_spectrogram(session_id, spec, events)


def _config(**overrides) -> TrainConfig:
    values = {"epochs": 2, "crop_frames": 256, "crops_per_session": 1, "batch_size": 2, "folds": 4, "seed": 0}
    values.update(overrides)
    return TrainConfig(**values)


class ScheduleAndFoldTests(unittest.TestCase):
    def test_cosine_schedule(self):
        self.assertEqual(cosine_learning_rate(0.01, 0, 80), 0.01)
        self.assertAlmostEqual(cosine_learning_rate(0.01, 40, 80), 0.005)
        self.assertAlmostEqual(cosine_learning_rate(0.01, 80, 80), 0.0)

    def test_subject_wise_folds(self):
        ids = [f"subject_{i:03d}" for i in range(10)]
        folds = assign_folds(ids, 4, seed=3)
        self.assertEqual(set(folds.assignments), set(ids))
        sizes = sorted(list(folds.assignments.values()).count(k) for k in range(4))
        self.assertEqual(sizes, [2, 2, 3, 3])
        self.assertEqual(assign_folds(list(reversed(ids)), 4, seed=3), folds)
        self.assertEqual(folds.fold_names(), ["fold_0", "fold_1", "fold_2", "fold_3"])
        self.assertEqual(folds.model_for("subject_004"), f"fold_{folds.assignments['subject_004']}")

    def test_single_fold_shares_one_model(self):
        folds = assign_folds(["a", "b"], 1, seed=0)
        self.assertEqual(folds.fold_names(), ["all"])
        self.assertEqual(folds.model_for("b"), "all")

    def test_too_few_subjects(self):
        with self.assertRaises(DataError):
            assign_folds(["a", "b", "c"], 4, seed=0)

    def test_unknown_session(self):
        folds = FoldAssignment(k=2, seed=0, assignments={"a": 0, "b": 1})
        with self.assertRaises(DataError):
            folds.model_for("c")


class SampleTests(unittest.TestCase):
    def test_class_weights_are_inverse_frequency(self):
        samples = [
            TrainingSample("a", np.zeros((3, 32, 64), np.float32), np.array([[0, 10], [20, 30]]), np.array([1, 2])),
            TrainingSample("b", np.zeros((3, 32, 64), np.float32), np.array([[0, 10], [20, 30]]), np.array([2, 2])),
        ]
        np.testing.assert_allclose(compute_class_weights(samples), [1.0, 2.0, 2.0 / 3.0, 1.0, 1.0])

    def test_biased_crop_holds_an_event(self):
        sample = _sample("a", 0, n_frames=1200)
        rng = np.random.default_rng(1)
        for _ in range(50):
            data, segments, labels = sample_crop(sample, 256, rng, biased=True)
            self.assertEqual(data.shape, (3, 32, 256))
            self.assertGreaterEqual(len(segments), 1)
            self.assertEqual(len(segments), len(labels))
            self.assertTrue(np.all(segments >= 0) and np.all(segments <= 256))

    def test_short_sessions_rejected(self):
        with self.assertRaises(DataError):
            effective_crop([_sample("a", 0, n_frames=48)], 256)

    def test_events_become_frames(self):
        sample = _sample("a", 2)
        self.assertEqual(sample.segments.shape[1], 2)
        self.assertTrue(np.all(sample.labels >= 1))


class TrainModelTests(unittest.TestCase):
    def setUp(self):
        self.samples = [_sample(f"subject_{i:03d}", i) for i in range(4)]
        self.arch = tiny_architecture()

    def test_same_seed_same_losses(self):
        first = train_model(self.samples, self.arch, _config())
        second = train_model(self.samples, self.arch, _config())
        self.assertEqual(first.epoch_losses, second.epoch_losses)
        for name, value in first.params.tensors.items():
            np.testing.assert_array_equal(value, second.params.tensors[name])

    def test_loss_goes_down(self):
        result = train_model(self.samples, self.arch, _config(epochs=8, base_lr=0.02, crops_per_session=2))
        self.assertEqual(len(result.epoch_losses), 8)
        self.assertLess(np.mean(result.epoch_losses[-2:]), np.mean(result.epoch_losses[:2]))

    def test_progress_and_log_rows(self):
        seen = []
        result = train_model(self.samples, self.arch, _config(), progress=lambda e, n, loss: seen.append((e, n)))
        self.assertEqual(seen, [(1, 2), (2, 2)])
        self.assertEqual({row["epoch"] for row in result.log_rows}, {1, 2})
        self.assertEqual(result.log_rows[0]["lr"], 0.01)

    def test_shape_mismatch(self):
        with self.assertRaises(DataError):
            train_model(self.samples, tiny_architecture(range_bins=16), _config())

    def test_divergence_reports_epoch_and_step(self):
        with patch("src.detector.trainer.training_loss", side_effect=NumericError("nan")):
            with self.assertRaises(DivergenceError) as ctx:
                train_model(self.samples, self.arch, _config())
        self.assertEqual((ctx.exception.epoch, ctx.exception.step), (1, 0))


@pytest.mark.slow
def test_cross_validation_writes_fold_models(tmp_path):
    samples = [_sample(f"subject_{i:03d}", i) for i in range(4)]
    results = train_cross_validation(samples, tiny_architecture(), _config(epochs=1), tmp_path)
    assert sorted(results) == ["fold_0", "fold_1", "fold_2", "fold_3"]
    folds = json.loads((tmp_path / FOLDS_NAME).read_text())
    assert sorted(folds["assignments"]) == [s.id for s in samples]
    for name, result in results.items():
        held_out = [sid for sid, k in folds["assignments"].items() if f"fold_{k}" == name]
        assert held_out and not set(held_out) & set(result.params.metadata["trained_on"])
        directory = tmp_path / name
        assert load_model(directory / MODEL_NAME).metadata["fold"] == name
        log = pd.read_csv(directory / TRAIN_LOG_NAME)
        assert list(log.columns[:3]) == ["epoch", "step", "lr"]
        assert len(json.loads((directory / LOSS_TRACE_NAME).read_text())["epoch_losses"]) == 1


if __name__ == "__main__":
    unittest.main()
