# src/detector/checkpoint.py
"""
model.bin: 4-byte magic, u32 LE header length, JSON header, then the named
little-endian float32 tensor blobs back to back in header order.

No pickle anywhere: weights round-trip through numpy only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError

from src.bootstrap import model_format
from src.detector.config import ArchitectureConfig
from src.detector.network import CLASS_NAMES, RasaRCNN
from src.errors import ModelFormatError, ModelNotFoundError, SessionFormatError
from src.session.store import read_framed_file, write_framed_file

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"RMDL"
MODEL_NAME = "model.bin"
TENSOR_DTYPE = np.dtype("<f4")


class TensorEntry(BaseModel):
    name: str
    shape: list[int]


class ModelHeader(BaseModel):
    format: str
    architecture: ArchitectureConfig
    seed: int
    classes: list[str]
    tensors: list[TensorEntry]
    metadata: dict = Field(default_factory=dict)


@dataclass(slots=True, eq=False)
class ModelParams:
    arch: ArchitectureConfig
    tensors: dict[str, np.ndarray]
    version: str
    seed: int = 0
    classes: tuple[str, ...] = CLASS_NAMES
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.tensors.items():
            if not np.all(np.isfinite(value)):
                raise ModelFormatError(f"tensor {name} holds non-finite values")

    @classmethod
    def from_module(cls, model: RasaRCNN, seed: int = 0, metadata: dict | None = None) -> ModelParams:
        tensors = {
            name: value.detach().cpu().to(torch.float32).numpy().copy()
            for name, value in model.state_dict().items()
        }
        return cls(model.arch, tensors, model_format(), seed, CLASS_NAMES, dict(metadata or {}))

    def to_module(self) -> RasaRCNN:
        model = RasaRCNN(self.arch)
        expected = model.state_dict()
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ModelFormatError(f"tensor names do not match the architecture (missing {missing}, extra {extra})")
        for name, reference in expected.items():
            if tuple(reference.shape) != self.tensors[name].shape:
                raise ModelFormatError(
                    f"tensor {name} has shape {self.tensors[name].shape}, architecture wants {tuple(reference.shape)}"
                )
        model.load_state_dict({name: torch.from_numpy(np.array(v)) for name, v in self.tensors.items()})
        model.eval()
        return model


def save_model(params: ModelParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(params.tensors)
    header = ModelHeader(
        format=params.version,
        architecture=params.arch,
        seed=params.seed,
        classes=list(params.classes),
        tensors=[TensorEntry(name=n, shape=list(params.tensors[n].shape)) for n in names],
        metadata=params.metadata,
    )
    chunks = (np.ascontiguousarray(params.tensors[n], dtype=TENSOR_DTYPE).tobytes() for n in names)
    write_framed_file(path, MODEL_MAGIC, header.model_dump(mode="json"), chunks)
    logger.info("Saved model (%d tensors) to %s", len(names), path)
    return path


def load_model(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise ModelNotFoundError(f"model not found: {path} (run the train stage first)")
    try:
        raw_header, payload = read_framed_file(path, MODEL_MAGIC)
    except SessionFormatError as exc:
        raise ModelFormatError(str(exc)) from exc
    try:
        header = ModelHeader.model_validate(raw_header)
    except ValidationError as exc:
        raise ModelFormatError(f"{path}: malformed model header: {exc}") from exc
    if header.format != model_format():
        raise ModelFormatError(f"{path}: model format {header.format!r}, this build reads {model_format()!r}")
    if tuple(header.classes) != CLASS_NAMES:
        raise ModelFormatError(f"{path}: class list {header.classes} does not match {list(CLASS_NAMES)}")

    tensors = {}
    offset = 0
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        size = count * TENSOR_DTYPE.itemsize
        if offset + size > len(payload):
            raise ModelFormatError(f"{path}: payload truncated at tensor {entry.name}")
        tensors[entry.name] = np.frombuffer(payload, dtype=TENSOR_DTYPE, count=count, offset=offset).reshape(entry.shape)
        offset += size
    if offset != len(payload):
        raise ModelFormatError(f"{path}: {len(payload) - offset} trailing payload bytes")

    params = ModelParams(header.architecture, tensors, header.format, header.seed, tuple(header.classes), header.metadata)
    params.to_module()
    return params
