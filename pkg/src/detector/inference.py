# src/detector/inference.py
from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from src.detector.anchors import decode_tensor
from src.detector.checkpoint import ModelParams
from src.detector.network import CLASS_NAMES, RasaRCNN
from src.detector.nms import nms_1d, segment_order
from src.detector.proposals import propose
from src.dsp.spectrogram import ThreeChannelSpectrogram
from src.errors import DataError
from src.session.model import DetectedSegment, parse_category

logger = logging.getLogger(__name__)

_FRAME_RATE_TOL = 1e-6


def _as_module(model: ModelParams | RasaRCNN) -> RasaRCNN:
    return model.to_module() if isinstance(model, ModelParams) else model


def detect(
    model: ModelParams | RasaRCNN,
    spectrogram: ThreeChannelSpectrogram,
    score_floor: float | None = None,
) -> list[DetectedSegment]:
    """Whole-night detection, no tiling. Segments come back sorted by start time."""
    net = _as_module(model)
    arch = net.arch
    if abs(spectrogram.frame_rate - arch.frame_rate_hz) > _FRAME_RATE_TOL:
        raise DataError(
            f"spectrogram frame rate {spectrogram.frame_rate} Hz does not match the model's {arch.frame_rate_hz} Hz"
        )
    floor = arch.score_floor if score_floor is None else score_floor
    n_frames = int(spectrogram.data.shape[-1])
    x = torch.from_numpy(np.ascontiguousarray(spectrogram.data, dtype=np.float32))[None]

    with torch.no_grad():
        features = net.backbone_forward(x)
        logits, deltas = net.spn_forward(features)
        anchors = net.anchors_for(features)
        proposals, _ = propose(logits[0], deltas[0], anchors, n_frames, arch.pre_nms_top_k, arch.proposal_nms_iou)
        if proposals.shape[0] == 0:
            return []
        rois = torch.from_numpy(np.column_stack([np.zeros(proposals.shape[0]), proposals])).to(x.dtype)
        class_logits, refinements = net.head_forward(net.pool(features, rois))
        probs = torch.softmax(class_logits.double(), dim=1).numpy()
        ref = torch.from_numpy(proposals)
        refined = decode_tensor(refinements.double(), ref.mean(dim=1), ref[:, 1] - ref[:, 0]).numpy()

    refined = np.clip(refined, 0.0, float(n_frames))
    classes = probs[:, 1:].argmax(axis=1) + 1
    scores = np.clip(probs[np.arange(probs.shape[0]), classes], 0.0, 1.0)
    min_frames = arch.min_duration_s * arch.frame_rate_hz
    lengths = refined[:, 1] - refined[:, 0]
    valid = np.flatnonzero((scores >= floor) & (lengths >= min_frames) & (lengths > 0))
    if valid.size == 0:
        return []

    kept = valid[nms_1d(refined[valid], scores[valid], arch.class_nms_iou, categories=classes[valid])]
    if arch.agnostic_nms_iou is not None:
        kept = kept[nms_1d(refined[kept], scores[kept], arch.agnostic_nms_iou)]
    kept = kept[segment_order(refined[kept], scores[kept])][: arch.max_detections]
    kept = kept[np.argsort(refined[kept, 0], kind="stable")]

    rate = arch.frame_rate_hz
    return [
        DetectedSegment(
            category=parse_category(CLASS_NAMES[classes[i]]),
            score=float(scores[i]),
            t_start=float(refined[i, 0] / rate),
            t_end=float(refined[i, 1] / rate),
        )
        for i in kept
    ]


def detect_many(
    model: ModelParams | RasaRCNN,
    spectrograms: Sequence[ThreeChannelSpectrogram],
    workers: int = 1,
    score_floor: float | None = None,
) -> list[list[DetectedSegment]]:
    """detect() over several sessions; results keep input order whatever the worker count."""
    net = _as_module(model)
    net.eval()
    if workers <= 1:
        return [detect(net, spec, score_floor) for spec in spectrograms]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda spec: detect(net, spec, score_floor), spectrograms))
