# src/config.py
"""
JSON configuration loading.

Every config object is a pydantic model; ``load_config`` turns a missing
file, bad JSON or a failed validation into ``ConfigError`` so the CLI can
map all of them to exit code 2.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator

from src.errors import ConfigError
from src.metrics.report import METHODS

logger = logging.getLogger(__name__)

_M = TypeVar("_M", bound=BaseModel)


def load_config(path, model: type[_M]) -> _M:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable config ({exc})") from exc
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{path}: invalid {model.__name__}: {exc}") from exc


def load_optional_config(path, model: type[_M]) -> _M:
    """``model()`` defaults when *path* is None."""
    return model() if path is None else load_config(path, model)


class PipelineConfig(BaseModel):
    """Inputs of the ``run`` command; relative paths resolve against the file's directory."""

    cohort_config: str = "cohort_default.json"
    preprocess_config: str | None = None
    architecture_config: str = "architecture_default.json"
    train_config: str = "train_default.json"
    fusion_config: str = "fusion_default.json"
    seed: int = 42
    folds: int = Field(default=4, ge=1)
    workers: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)
    store_beat: bool = True
    methods: list[str] = Field(default_factory=lambda: list(METHODS))
    icc_variant: str = "2,1"
    iou_threshold: float = Field(default=0.5, gt=0, le=1)
    timeline_subjects: int = Field(default=2, ge=0)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value):
        unknown = [m for m in value if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown evaluation method(s) {unknown}; expected a subset of {list(METHODS)}")
        if not value:
            raise ValueError("at least one evaluation method is required")
        return value

    @field_validator("icc_variant")
    @classmethod
    def _known_variant(cls, value):
        if value not in ("2,1", "3,1", "1,1"):
            raise ValueError(f"icc_variant must be one of 2,1 / 3,1 / 1,1, got {value!r}")
        return value

    def resolve(self, base_dir) -> PipelineConfig:
        """Absolute paths, checking that every referenced file exists."""
        base_dir = Path(base_dir)
        updates = {}
        for name in ("cohort_config", "preprocess_config", "architecture_config", "train_config", "fusion_config"):
            value = getattr(self, name)
            if value is None:
                continue
            path = Path(value)
            if not path.is_absolute():
                path = base_dir / path
            if not path.is_file():
                raise ConfigError(f"{name} not found: {path}")
            updates[name] = str(path.resolve())
        return self.model_copy(update=updates)


def load_pipeline_config(path) -> PipelineConfig:
    config = load_config(path, PipelineConfig)
    return config.resolve(Path(path).resolve().parent)
