# src/detector/trainer.py
"""
Seeded SGD training with cosine annealing on half-hour crops, plus the
subject-wise k-fold driver that writes one model per fold.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel

from src.detector.checkpoint import MODEL_NAME, ModelParams, save_model
from src.detector.config import ArchitectureConfig, TrainConfig
from src.detector.network import CLASS_NAMES, MIN_INPUT_FRAMES, RasaRCNN
from src.detector.targets import training_loss
from src.dsp.spectrogram import ThreeChannelSpectrogram
from src.errors import DataError, DivergenceError, NumericError
from src.session.model import EventAnnotation
from src.session.store import write_json

logger = logging.getLogger(__name__)

FOLDS_NAME = "folds.json"
TRAIN_LOG_NAME = "train_log.csv"
LOSS_TRACE_NAME = "loss_trace.json"
ALL_FOLD = "all"
LOG_COLUMNS = ["epoch", "step", "lr", "loss_total", "loss_spn_cls", "loss_spn_reg", "loss_head_cls", "loss_head_reg"]
MIN_KEPT_FRACTION = 0.5

ProgressFn = Callable[[int, int, float], None]


@dataclass(frozen=True, slots=True, eq=False)
class TrainingSample:
    """One session as the detector sees it: spectrogram plus events in frames."""

    id: str
    data: np.ndarray        # (3, R, T) float32
    segments: np.ndarray    # (M, 2) frames
    labels: np.ndarray      # (M,) class index into CLASS_NAMES

    @classmethod
    def from_spectrogram(
        cls, session_id: str, spec: ThreeChannelSpectrogram, events: Sequence[EventAnnotation]
    ) -> TrainingSample:
        rate = spec.frame_rate
        segments = np.array([[e.t_start * rate, e.t_end * rate] for e in events], dtype=np.float64).reshape(-1, 2)
        labels = np.array([CLASS_NAMES.index(str(e.category)) for e in events], dtype=np.int64)
        return cls(session_id, np.asarray(spec.data, dtype=np.float32), segments, labels)

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[-1])


@dataclass(slots=True)
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    log_rows: list[dict] = field(default_factory=list)


class FoldAssignment(BaseModel):
    k: int
    seed: int
    assignments: dict[str, int]

    def fold_names(self) -> list[str]:
        return [ALL_FOLD] if self.k == 1 else [fold_name(i) for i in range(self.k)]

    def model_for(self, session_id: str) -> str:
        """Held-out model for a session (the shared model when k == 1)."""
        if self.k == 1:
            return ALL_FOLD
        if session_id not in self.assignments:
            raise DataError(f"session {session_id} is not part of the fold assignment")
        return fold_name(self.assignments[session_id])


def fold_name(index: int) -> str:
    return f"fold_{index}"


def cosine_learning_rate(base_lr: float, epoch: int, epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def compute_class_weights(samples: Sequence[TrainingSample]) -> np.ndarray:
    """Inverse event-class frequency (mean 1 over present classes); background 1."""
    counts = np.zeros(len(CLASS_NAMES), dtype=np.float64)
    for sample in samples:
        np.add.at(counts, sample.labels, 1.0)
    event_counts = counts[1:]
    total = event_counts.sum()
    weights = np.ones(len(CLASS_NAMES), dtype=np.float64)
    present = event_counts > 0
    if total > 0:
        weights[1:][present] = total / (present.sum() * event_counts[present])
    return weights


def assign_folds(session_ids: Sequence[str], k: int, seed: int) -> FoldAssignment:
    ids = sorted(session_ids)
    if k == 1:
        return FoldAssignment(k=1, seed=seed, assignments={sid: 0 for sid in ids})
    if len(ids) < k:
        raise DataError(f"{k}-fold cross-validation needs at least {k} subjects, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldAssignment(k=k, seed=seed, assignments={ids[j]: int(pos % k) for pos, j in enumerate(order)})


def effective_crop(samples: Sequence[TrainingSample], crop_frames: int) -> int:
    crop = min([crop_frames] + [s.n_frames for s in samples])
    if crop < MIN_INPUT_FRAMES:
        raise DataError(f"training sessions are too short: {crop} frames (need {MIN_INPUT_FRAMES})")
    return crop


def sample_crop(
    sample: TrainingSample, crop: int, rng: np.random.Generator, biased: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cut *crop* frames; biased crops contain one whole event when one fits."""
    total = sample.n_frames
    start = 0
    if total > crop:
        start = int(rng.integers(0, total - crop + 1))
        if biased and sample.segments.shape[0] > 0:
            event_start, event_end = sample.segments[int(rng.integers(sample.segments.shape[0]))]
            lo = max(0, int(math.ceil(event_end - crop)))
            hi = min(total - crop, int(math.floor(event_start)))
            if hi >= lo:
                start = int(rng.integers(lo, hi + 1))

    clipped = np.clip(sample.segments - start, 0.0, float(crop))
    original = sample.segments[:, 1] - sample.segments[:, 0]
    kept = (clipped[:, 1] - clipped[:, 0]) >= MIN_KEPT_FRACTION * original
    data = sample.data[..., start : start + crop]
    return data, clipped[kept], sample.labels[kept]


def train_model(
    samples: Sequence[TrainingSample],
    arch: ArchitectureConfig,
    config: TrainConfig,
    metadata: dict | None = None,
    progress: ProgressFn | None = None,
) -> TrainResult:
    if not samples:
        raise DataError("no training sessions")
    for sample in samples:
        if sample.data.shape[0] != arch.in_channels or sample.data.shape[1] != arch.range_bins:
            raise DataError(
                f"session {sample.id} spectrogram shape {sample.data.shape[:2]} does not match "
                f"the architecture ({arch.in_channels}, {arch.range_bins})"
            )

    torch.manual_seed(config.seed)
    model = RasaRCNN(arch)
    model.train()
    rng = np.random.default_rng(config.seed)
    weights = np.asarray(config.class_weights) if config.class_weights else compute_class_weights(samples)
    class_weights = torch.as_tensor(weights, dtype=torch.float32)
    crop = effective_crop(samples, config.crop_frames)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.base_lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    logger.info(
        "Training on %d session(s): %d epoch(s), crop %d frames, class weights %s",
        len(samples),
        config.epochs,
        crop,
        np.round(weights, 3).tolist(),
    )

    epoch_losses: list[float] = []
    rows: list[dict] = []
    for epoch in range(config.epochs):
        lr = cosine_learning_rate(config.base_lr, epoch, config.epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr

        crops = [
            sample_crop(s, crop, rng, biased=bool(rng.random() < config.event_biased_fraction))
            for s in samples
            for _ in range(config.crops_per_session)
        ]
        order = rng.permutation(len(crops))
        totals = []
        for step, first in enumerate(range(0, order.size, config.batch_size)):
            batch = [crops[i] for i in order[first : first + config.batch_size]]
            x = torch.from_numpy(np.stack([b[0] for b in batch]).astype(np.float32, copy=False))
            try:
                terms = training_loss(model, x, [b[1] for b in batch], [b[2] for b in batch], rng, class_weights)
            except NumericError as exc:
                raise DivergenceError(epoch + 1, step, getattr(exc, "terms", {})) from exc
            optimizer.zero_grad()
            terms.total.backward()
            if config.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
            optimizer.step()

            values = terms.as_floats()
            totals.append(values["loss_total"])
            rows.append({"epoch": epoch + 1, "step": step, "lr": lr, **values})

        epoch_loss = float(np.mean(totals))
        epoch_losses.append(epoch_loss)
        logger.info("epoch %d/%d  lr %.5f  loss %.5f", epoch + 1, config.epochs, lr, epoch_loss)
        if progress is not None:
            progress(epoch + 1, config.epochs, epoch_loss)

    model.eval()
    params = ModelParams.from_module(model, seed=config.seed, metadata=dict(metadata or {}))
    return TrainResult(params, epoch_losses, rows)


def write_training_artifacts(result: TrainResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(result.params, directory / MODEL_NAME)
    pd.DataFrame(result.log_rows, columns=LOG_COLUMNS).to_csv(directory / TRAIN_LOG_NAME, index=False)
    write_json(directory / LOSS_TRACE_NAME, {"epoch_losses": result.epoch_losses})
    return directory


def train_cross_validation(
    samples: Sequence[TrainingSample],
    arch: ArchitectureConfig,
    config: TrainConfig,
    out_dir,
    progress: ProgressFn | None = None,
) -> dict[str, TrainResult]:
    """Train one model per subject-wise fold (or a single ``all`` model for k == 1)."""
    out_dir = Path(out_dir)
    by_id = {s.id: s for s in samples}
    folds = assign_folds(list(by_id), config.folds, config.seed)
    write_json(out_dir / FOLDS_NAME, folds)

    results = {}
    for index, name in enumerate(folds.fold_names()):
        if folds.k == 1:
            train_ids = sorted(by_id)
        else:
            train_ids = sorted(sid for sid, fold in folds.assignments.items() if fold != index)
        logger.info("Training %s on %d session(s)", name, len(train_ids))
        result = train_model(
            [by_id[sid] for sid in train_ids],
            arch,
            config,
            metadata={"fold": name, "trained_on": train_ids},
            progress=progress,
        )
        write_training_artifacts(result, out_dir / name)
        results[name] = result
    return results
