import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from src.bootstrap import model_format
from src.detector.checkpoint import MODEL_MAGIC, ModelParams, load_model, save_model
from src.detector.network import RasaRCNN
from src.errors import ModelFormatError, ModelNotFoundError
from tests._pipeline_test_utils import tiny_architecture


def _params(seed: int = 0) -> ModelParams:
    torch.manual_seed(seed)
    return ModelParams.from_module(RasaRCNN(tiny_architecture()), seed=seed, metadata={"fold": "fold_0"})


class CheckpointTests(unittest.TestCase):
    def test_round_trip(self):
        params = _params()
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_model(params, Path(temp_dir) / "fold_0" / "model.bin")
            self.assertEqual(path.read_bytes()[:4], MODEL_MAGIC)
            loaded = load_model(path)
        self.assertEqual(loaded.arch, params.arch)
        self.assertEqual(loaded.version, model_format())
        self.assertEqual(loaded.metadata, {"fold": "fold_0"})
        self.assertEqual(set(loaded.tensors), set(params.tensors))
        for name, value in params.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], value)

    def test_loaded_module_reproduces_outputs(self):
        params = _params(1)
        x = torch.randn(1, 3, 32, 96, generator=torch.Generator().manual_seed(0))
        with tempfile.TemporaryDirectory() as temp_dir:
            loaded = load_model(save_model(params, Path(temp_dir) / "model.bin"))
        with torch.no_grad():
            a = params.to_module().backbone_forward(x)
            b = loaded.to_module().backbone_forward(x)
        for left, right in zip(a, b):
            torch.testing.assert_close(left, right, rtol=0, atol=0)

    def test_missing_model(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with self.assertRaisesRegex(ModelNotFoundError, "model not found"):
                load_model(Path(temp_dir) / "fold_3" / "model.bin")

    def test_format_mismatch(self):
        params = _params()
        params.version = "rosa-model/0"
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_model(params, Path(temp_dir) / "model.bin")
            with self.assertRaisesRegex(ModelFormatError, "model format"):
                load_model(path)

    def test_truncated_payload(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_model(_params(), Path(temp_dir) / "model.bin")
            path.write_bytes(path.read_bytes()[:-16])
            with self.assertRaises(ModelFormatError):
                load_model(path)

    def test_wrong_magic(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_model(_params(), Path(temp_dir) / "model.bin")
            path.write_bytes(b"XXXX" + path.read_bytes()[4:])
            with self.assertRaises(ModelFormatError):
                load_model(path)

    def test_architecture_mismatch(self):
        params = _params()
        params.arch = tiny_architecture(head_hidden=16)
        with self.assertRaises(ModelFormatError):
            params.to_module()

    def test_non_finite_weights_rejected(self):
        params = _params()
        tensors = dict(params.tensors)
        tensors["stem.bias"] = np.full_like(tensors["stem.bias"], np.nan)
        with self.assertRaises(ModelFormatError):
            ModelParams(params.arch, tensors, params.version)


if __name__ == "__main__":
    unittest.main()
