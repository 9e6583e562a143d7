import os
import argparse
import json
import shutil
import sys
import threading
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

logging.basicConfig(level=os.environ.get("ROSA_LOG_LEVEL", "INFO").upper(), format='%(message)s')
logger = logging.getLogger(__name__)

# Allow running as either `python src/main.py` or `python -m src.main`.
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if __package__ in (None, ""):
    _root_str = str(PROJECT_ROOT)
    if _root_str not in sys.path:
        sys.path.insert(0, _root_str)

import pandas as pd  # noqa: E402
from tqdm import tqdm  # noqa: E402

from src.bootstrap import check_model_integrity, configure_torch, load_versions, print_startup_banner  # noqa: E402
from src.config import PipelineConfig, load_config, load_optional_config, load_pipeline_config  # noqa: E402
from src.detector.checkpoint import MODEL_NAME, load_model  # noqa: E402
from src.detector.config import ArchitectureConfig, TrainConfig  # noqa: E402
from src.detector.inference import detect_many  # noqa: E402
from src.detector.trainer import ALL_FOLD, FOLDS_NAME, FoldAssignment, TrainingSample, train_cross_validation  # noqa: E402
from src.dsp.preprocess import PreprocessParams, preprocess_session  # noqa: E402
from src.dsp.spectrogram import ThreeChannelSpectrogram, load_spectrogram, save_spectrogram  # noqa: E402
from src.errors import ConfigError, DataError, ModelNotFoundError, RosaError, exit_code_for  # noqa: E402
from src.fusion.fusion import FusionParams, fuse_session  # noqa: E402
from src.fusion.grid_search import (  # noqa: E402
    GridSession,
    ThresholdSelection,
    cross_validated_search,
    grid_search_thresholds,
)
from src.metrics.agreement import compute_ahi  # noqa: E402
from src.metrics.report import (  # noqa: E402
    METHODS,
    REPORT_JSON,
    SCATTER_CSV,
    CohortReport,
    EvaluationSession,
    evaluate_cohort,
    write_report,
)
from src.plotting.figures import (  # noqa: E402
    PLOT_KINDS,
    build_bland_altman_figure,
    build_scatter_figure,
    build_spectrogram_figure,
    build_timeline_figure,
    save_svg,
)
from src.session.model import SleepSession  # noqa: E402
from src.session.store import (  # noqa: E402
    list_session_dirs,
    load_manifest,
    load_session,
    read_json,
    read_segments,
    write_json,
    write_segments,
)
from src.simulation.cohort import COHORT_INDEX_NAME, CohortIndex, generate_cohort  # noqa: E402
from src.simulation.config import CohortConfig  # noqa: E402

# Load environment variables
load_dotenv()


# ---------------------------------------------------------------------------
# Pydantic models: stage state on disk
# ---------------------------------------------------------------------------

class StageInfo(BaseModel):
    completed: bool = False
    timestamp: str | None = None
    artifacts: dict[str, str] = Field(default_factory=dict)


class StageState(BaseModel):
    pipeline_config: str | None = None
    output_dir: str | None = None
    selected_stage: str | None = None
    updated_at: str | None = None
    stages: dict[str, StageInfo] = Field(default_factory=dict)


_state_lock = threading.RLock()

_M = TypeVar("_M", bound=BaseModel)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

PIPELINE_ORDER = ("simulate", "preprocess", "train", "detect", "gridsearch", "fuse", "evaluate", "plot")
STAGE_DIRS = {
    "simulate": "cohort",
    "preprocess": "spectrograms",
    "train": "models",
    "detect": "detections",
    "gridsearch": "fusion",
    "fuse": "fused",
    "evaluate": "report",
    "plot": "figures",
}
DETECTIONS_NAME = "detections.jsonl"
FUSED_NAME = "fused_detections.jsonl"
FUSION_FEATURES_NAME = "fusion_features.csv"
FUSION_PARAMS_NAME = "fusion_params.json"
THRESHOLDS_NAME = "thresholds.json"
GRID_TABLE_NAME = "grid.csv"
SPECTROGRAM_SUFFIX = ".spec"


def emit_progress(stage, progress, message):
    """Emit a JSON progress marker to stdout for a supervising process to capture."""
    print(json.dumps({
        "type": "progress",
        "stage": stage,
        "progress": progress,
        "message": message,
        "timestamp": time.time()
    }), flush=True)


def _read_json_file(path, default=None, model: type[_M] | None = None):
    """Read a JSON file and optionally validate with a Pydantic model.

    On validation failure the raw data is returned with a warning so a stale
    stage_state.json never stops a run.
    """
    path = Path(path)
    if not path.is_file():
        return default
    with _state_lock:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("Could not read %s: %s", path, exc)
            return default
    if model is not None and isinstance(data, dict):
        try:
            return model.model_validate(data)
        except ValidationError as exc:
            logger.warning("Validation failed for %s with model %s: %s", path, model.__name__, exc)
    return data


def _write_json_file(path, payload):
    with _state_lock:
        write_json(path, payload)


def _artifact_paths(output_dir) -> dict[str, Path]:
    out = Path(output_dir)
    paths = {stage: out / name for stage, name in STAGE_DIRS.items()}
    paths["stage_state"] = out / "data" / "stage_state.json"
    return paths


def _safe_remove_path(path):
    p = Path(path)
    if not p.exists():
        return
    try:
        if p.is_dir():
            shutil.rmtree(p)
        else:
            p.unlink()
    except OSError as exc:
        logger.warning("Failed to delete artifact %s: %s", p, exc)


def _parse_stage(value: str) -> str:
    normalized = str(value or "").strip().lower()
    if normalized not in PIPELINE_ORDER:
        raise argparse.ArgumentTypeError(
            f"Invalid stage '{value}'. Choose from: {', '.join(PIPELINE_ORDER)}"
        )
    return normalized


def _redo_invalidation_sequence(start_stage_name: str) -> list[str]:
    if start_stage_name not in PIPELINE_ORDER:
        raise ConfigError(f"Unknown stage '{start_stage_name}'. Expected one of: {', '.join(PIPELINE_ORDER)}")
    return list(PIPELINE_ORDER[PIPELINE_ORDER.index(start_stage_name):])


def invalidate_stages(start_stage_name: str, output_dir, stage_state: dict) -> list[str]:
    """Delete the artifacts of *start_stage_name* and every downstream stage."""
    stages_to_invalidate = _redo_invalidation_sequence(start_stage_name)
    artifacts = _artifact_paths(output_dir)
    with _state_lock:
        logger.info("Redoing stage '%s'. Purging downstream artifacts in %s", start_stage_name, output_dir)
        stages_block = stage_state.setdefault("stages", {})
        for stage_name in stages_to_invalidate:
            _safe_remove_path(artifacts[stage_name])
            stages_block[stage_name] = StageInfo().model_dump()
        stage_state["updated_at"] = datetime.now().isoformat()
    return stages_to_invalidate


def _mark_stage_complete(state: dict, stage_name: str, artifacts: dict[str, Any] | None = None):
    stage = state.setdefault("stages", {}).setdefault(stage_name, {})
    stage["completed"] = True
    stage["timestamp"] = datetime.now().isoformat()
    stage["artifacts"] = {k: str(v) for k, v in (artifacts or {}).items()}


def _persist_state(state_path, state: dict, config_path, output_dir, selected_stage):
    with _state_lock:
        state["pipeline_config"] = str(config_path)
        state["output_dir"] = str(output_dir)
        state["selected_stage"] = selected_stage
        state["updated_at"] = datetime.now().isoformat()
        _write_json_file(state_path, state)


def _cohort_ids(cohort_dir) -> list[str] | None:
    index = _read_json_file(Path(cohort_dir) / COHORT_INDEX_NAME, model=CohortIndex)
    return index.subjects if isinstance(index, CohortIndex) else None


def validate_stage_artifacts(stage_name: str, output_dir) -> bool:
    """Return True if the given stage's output artifacts exist and are structurally valid."""
    paths = _artifact_paths(output_dir)
    ids = _cohort_ids(paths["simulate"])
    try:
        if ids is None:
            return False
        if stage_name == "simulate":
            return all((paths["simulate"] / sid / "manifest.json").is_file() for sid in ids)
        if stage_name == "preprocess":
            return all((paths["preprocess"] / f"{sid}{SPECTROGRAM_SUFFIX}").is_file() for sid in ids)
        if stage_name == "train":
            folds = _read_json_file(paths["train"] / FOLDS_NAME, model=FoldAssignment)
            if not isinstance(folds, FoldAssignment):
                return False
            return not check_model_integrity(paths["train"], folds.fold_names())
        if stage_name == "detect":
            return all((paths["detect"] / sid / DETECTIONS_NAME).is_file() for sid in ids)
        if stage_name == "gridsearch":
            selection = _read_json_file(paths["gridsearch"] / THRESHOLDS_NAME, model=ThresholdSelection)
            return isinstance(selection, ThresholdSelection)
        if stage_name == "fuse":
            return all((paths["fuse"] / sid / FUSED_NAME).is_file() for sid in ids)
        if stage_name == "evaluate":
            report = _read_json_file(paths["evaluate"] / REPORT_JSON, model=CohortReport)
            return isinstance(report, CohortReport)
        if stage_name == "plot":
            return paths["plot"].is_dir() and any(paths["plot"].glob("*.svg"))
        return False
    except OSError as exc:
        logger.warning("validate_stage_artifacts(%s): %s", stage_name, exc)
        return False


def _read_config(config_path=None) -> dict:
    """Read data/config.json and return its contents as a dict."""
    if config_path is None:
        config_path = PROJECT_ROOT / "data" / "config.json"
    data = _read_json_file(Path(config_path).resolve(), default={})
    return data if isinstance(data, dict) else {}


def _resolve_output_dir(output_dir_flag=None, config_path=None) -> Path:
    """
    Determine the workspace directory of ``run``.

    --output-dir wins, then ROSA_WORKSPACE_DIR, then ``default_workspace_dir``
    from data/config.json, then <repo_root>/Workspaces/.
    """
    if output_dir_flag is not None:
        return Path(output_dir_flag).resolve()
    env_dir = os.environ.get("ROSA_WORKSPACE_DIR")
    if env_dir:
        return Path(env_dir).resolve()
    config = _read_config(config_path)
    base = config.get("default_workspace_dir") or str(PROJECT_ROOT / "Workspaces")
    return Path(base).resolve()


def _with_overrides(model: _M, **overrides) -> _M:
    """Re-validate *model* with the non-None *overrides* applied."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return model
    try:
        return type(model).model_validate({**model.model_dump(), **updates})
    except ValidationError as exc:
        raise ConfigError(f"invalid {type(model).__name__} override {updates}: {exc}") from exc


def _parse_methods(value: str) -> list[str]:
    methods = [m.strip() for m in str(value).split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise argparse.ArgumentTypeError(f"--methods takes a comma list of {', '.join(METHODS)}, got '{value}'")
    return methods


def _parse_grid(value: str) -> list[float]:
    """``2:8:0.5`` (inclusive range) or ``2,3,4``."""
    try:
        if ":" in value:
            lo, hi, step = (float(v) for v in value.split(":"))
            if step <= 0:
                raise ValueError("step must be > 0")
            count = int(round((hi - lo) / step)) + 1
            return [round(lo + i * step, 6) for i in range(max(count, 0))]
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid '{value}': {exc}") from exc


def _run_jobs(job, items, workers: int, desc: str) -> list:
    items = list(items)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(job, items), total=len(items), desc=desc, disable=None))
    return [job(item) for item in tqdm(items, desc=desc, disable=None)]


# ---------------------------------------------------------------------------
# Stage inputs
# ---------------------------------------------------------------------------

def _load_cohort(cohort_dir) -> list[SleepSession]:
    return [load_session(d, with_beat=False) for d in list_session_dirs(cohort_dir)]


def _spectrogram_path(spectrogram_dir, session_id: str) -> Path:
    return Path(spectrogram_dir) / f"{session_id}{SPECTROGRAM_SUFFIX}"


def _load_spectrogram_for(spectrogram_dir, session_id: str) -> ThreeChannelSpectrogram:
    path = _spectrogram_path(spectrogram_dir, session_id)
    if not path.is_file():
        raise DataError(f"no spectrogram for {session_id} at {path} (run the preprocess stage first)")
    spec = load_spectrogram(path)
    if not isinstance(spec, ThreeChannelSpectrogram):
        raise DataError(f"{path} holds a single-channel spectrogram, the detector needs three channels")
    return spec


def _load_detections(detections_dir, session_id: str, name: str = DETECTIONS_NAME):
    path = Path(detections_dir) / session_id / name
    if not path.is_file():
        raise FileNotFoundError(f"no detections for {session_id}: {path}")
    return read_segments(path, detections=True)


def _load_folds(models_dir) -> FoldAssignment:
    models_dir = Path(models_dir)
    folds = _read_json_file(models_dir / FOLDS_NAME, model=FoldAssignment)
    if isinstance(folds, FoldAssignment):
        return folds
    if (models_dir / ALL_FOLD / MODEL_NAME).is_file():
        return FoldAssignment(k=1, seed=0, assignments={})
    raise ModelNotFoundError(f"model not found: {models_dir} has no {FOLDS_NAME} (run the train stage first)")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_simulate(config: CohortConfig, out_dir, workers=1, store_beat=True, preprocess_params=None) -> list[Path]:
    emit_progress("SIMULATE", 0, f"Simulating {config.n_subjects} session(s)...")
    directories = generate_cohort(config, out_dir, workers=workers, store_beat=store_beat,
                                  preprocess_params=preprocess_params)
    emit_progress("SIMULATE", 100, f"Wrote {len(directories)} session(s) to {out_dir}.")
    return directories


def stage_preprocess(cohort_dir, out_dir, params: PreprocessParams, workers=1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_progress("PREPROCESS", 0, "Building three-channel spectrograms...")

    def _job(session_dir: Path) -> Path:
        manifest = load_manifest(session_dir)
        target = _spectrogram_path(out_dir, manifest.id)
        if manifest.files.beat and (session_dir / manifest.files.beat).is_file():
            spec = preprocess_session(load_session(session_dir, mmap=True), params)
        elif manifest.files.spectrogram:
            # beat matrix was not stored; reuse the spectrogram made at simulation time
            spec = load_spectrogram(session_dir / manifest.files.spectrogram)
        else:
            raise DataError(f"session {manifest.id}: neither beat data nor a stored spectrogram")
        save_spectrogram(target, spec)
        return target

    written = _run_jobs(_job, list_session_dirs(cohort_dir), workers, "preprocess")
    emit_progress("PREPROCESS", 100, f"Wrote {len(written)} spectrogram(s).")
    return written


def stage_train(cohort_dir, spectrogram_dir, out_dir, arch: ArchitectureConfig, config: TrainConfig, threads=1):
    configure_torch(threads)
    samples = [
        TrainingSample.from_spectrogram(s.id, _load_spectrogram_for(spectrogram_dir, s.id), s.events)
        for s in _load_cohort(cohort_dir)
    ]
    if not samples:
        raise DataError(f"no sessions to train on under {cohort_dir}")
    emit_progress("TRAIN", 0, f"Training on {len(samples)} session(s), {config.folds} fold(s)...")

    def _progress(epoch, epochs, loss):
        emit_progress("TRAIN", int(100 * epoch / epochs), f"epoch {epoch}/{epochs} loss {loss:.4f}")

    results = train_cross_validation(samples, arch, config, out_dir, progress=_progress)
    emit_progress("TRAIN", 100, f"Trained {len(results)} model(s).")
    return results


def stage_detect(cohort_dir, spectrogram_dir, models_dir, out_dir, workers=1, score_floor=None, threads=1):
    """Each session is scored by the model of the fold it was held out from."""
    configure_torch(threads)
    folds = _load_folds(models_dir)
    missing = check_model_integrity(models_dir, folds.fold_names())
    if missing:
        raise ModelNotFoundError(
            f"model not found: {Path(models_dir) / missing[0] / MODEL_NAME} (run the train stage first)"
        )

    ids = [load_manifest(d).id for d in list_session_dirs(cohort_dir)]
    groups: dict[str, list[str]] = {}
    for sid in ids:
        groups.setdefault(folds.model_for(sid), []).append(sid)

    emit_progress("DETECT", 0, f"Detecting events in {len(ids)} session(s)...")
    out_dir = Path(out_dir)
    written = []
    for index, (model_name, members) in enumerate(sorted(groups.items())):
        params = load_model(Path(models_dir) / model_name / MODEL_NAME)
        specs = [_load_spectrogram_for(spectrogram_dir, sid) for sid in members]
        for sid, detections in zip(members, detect_many(params, specs, workers=workers, score_floor=score_floor)):
            path = out_dir / sid / DETECTIONS_NAME
            path.parent.mkdir(parents=True, exist_ok=True)
            write_segments(path, detections)
            written.append(path)
            logger.info("%s: %d detection(s) with %s", sid, len(detections), model_name)
        emit_progress("DETECT", int(100 * (index + 1) / len(groups)), f"{model_name} done.")
    return written


def _grid_sessions(cohort_dir, detections_dir, base: FusionParams) -> list[GridSession]:
    return [
        GridSession.build(s.id, compute_ahi(s.events, s.tst), s.tst, _load_detections(detections_dir, s.id), s.spo2, base)
        for s in _load_cohort(cohort_dir)
    ]


def stage_gridsearch(
    cohort_dir,
    detections_dir,
    out_dir,
    base: FusionParams,
    models_dir=None,
    t1_grid=None,
    t2_grid=None,
    icc_variant="2,1",
    workers=1,
) -> ThresholdSelection:
    emit_progress("GRIDSEARCH", 0, "Searching fusion thresholds...")
    sessions = _grid_sessions(cohort_dir, detections_dir, base)
    pooled = grid_search_thresholds(sessions, base, t1_grid, t2_grid, icc_variant, workers)
    selection = ThresholdSelection(icc_variant=icc_variant, pooled=pooled.params, pooled_icc=pooled.icc)

    folds = _load_folds(models_dir) if models_dir is not None else None
    if folds is not None and folds.k > 1:
        fold_of = {s.id: folds.assignments[s.id] for s in sessions if s.id in folds.assignments}
        try:
            per_fold = cross_validated_search(
                [s for s in sessions if s.id in fold_of], fold_of, base, t1_grid, t2_grid, icc_variant, workers
            )
        except RosaError as exc:
            logger.warning("Per-fold threshold search failed (%s); every fold uses the pooled thresholds.", exc)
        else:
            for fold, result in per_fold.items():
                name = folds.fold_names()[fold]
                selection.folds[name] = result.params
                selection.fold_icc[name] = result.icc

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / THRESHOLDS_NAME, selection)
    pd.DataFrame(pooled.table, columns=["t1", "t2", "icc"]).to_csv(out_dir / GRID_TABLE_NAME, index=False)
    emit_progress("GRIDSEARCH", 100, f"T1={pooled.params.t1:g} T2={pooled.params.t2:g} ICC={pooled.icc:.4f}")
    return selection


def stage_fuse(cohort_dir, detections_dir, out_dir, base: FusionParams, selection=None, models_dir=None, overrides=None):
    """Rescore every detection; thresholds come from *selection* per held-out fold unless overridden."""
    folds = _load_folds(models_dir) if (selection is not None and models_dir is not None) else None
    out_dir = Path(out_dir)
    written = []
    sessions = _load_cohort(cohort_dir)
    emit_progress("FUSE", 0, f"Fusing SpO2 into {len(sessions)} session(s)...")
    for session in sessions:
        params = base
        if selection is not None:
            chosen = selection.params_for(folds.model_for(session.id) if folds is not None else None)
            params = _with_overrides(base, t1=chosen.t1, t2=chosen.t2)
        params = _with_overrides(params, **(overrides or {}))

        fused = fuse_session(_load_detections(detections_dir, session.id), session.spo2, params)
        session_dir = out_dir / session.id
        session_dir.mkdir(parents=True, exist_ok=True)
        write_segments(session_dir / FUSED_NAME, [f.detection for f in fused])
        write_json(session_dir / FUSION_PARAMS_NAME, params)
        pd.DataFrame(
            [
                {
                    "t_start_s": f.detection.t_start,
                    "t_end_s": f.detection.t_end,
                    "type": str(f.detection.category),
                    "radar_score": f.radar_score,
                    "fused_score": f.detection.score,
                    "p_d": f.features.p_d,
                    "p_r": f.features.p_r,
                    "empty_window": f.features.empty_window,
                    "counted": f.counted,
                }
                for f in fused
            ],
            columns=["t_start_s", "t_end_s", "type", "radar_score", "fused_score", "p_d", "p_r", "empty_window", "counted"],
        ).to_csv(session_dir / FUSION_FEATURES_NAME, index=False)
        written.append(session_dir / FUSED_NAME)
    emit_progress("FUSE", 100, f"Wrote {len(written)} fused detection file(s).")
    return written


def stage_evaluate(
    cohort_dir,
    out_dir,
    methods=METHODS,
    detections_dir=None,
    fused_dir=None,
    decision_threshold=0.5,
    icc_variant="2,1",
    iou_threshold=0.5,
) -> CohortReport:
    if "radar" in methods and detections_dir is None:
        raise ConfigError("evaluating the radar method needs --detections")
    if "fused" in methods and fused_dir is None:
        raise ConfigError("evaluating the fused method needs --fused")
    emit_progress("EVALUATE", 0, f"Evaluating {', '.join(methods)}...")
    sessions = [
        EvaluationSession(
            id=s.id,
            tst=s.tst,
            events=s.events,
            spo2=s.spo2,
            radar=tuple(_load_detections(detections_dir, s.id)) if "radar" in methods else (),
            fused=tuple(_load_detections(fused_dir, s.id, FUSED_NAME)) if "fused" in methods else (),
        )
        for s in _load_cohort(cohort_dir)
    ]
    report = evaluate_cohort(sessions, methods, decision_threshold, icc_variant, iou_threshold)
    write_report(report, out_dir)
    emit_progress("EVALUATE", 100, f"Report written to {out_dir}.")
    return report


def _spectrogram_for_plot(session_dir, spectrogram_path=None) -> ThreeChannelSpectrogram:
    if spectrogram_path is not None:
        spec = load_spectrogram(spectrogram_path)
    else:
        manifest = load_manifest(session_dir)
        if manifest.files.spectrogram:
            spec = load_spectrogram(Path(session_dir) / manifest.files.spectrogram)
        else:
            spec = preprocess_session(load_session(session_dir, mmap=True))
    if not isinstance(spec, ThreeChannelSpectrogram):
        raise DataError("the spectrogram plot needs a three-channel spectrogram")
    return spec


def _report_columns(report_dir, method: str) -> tuple[list[float], list[float]]:
    path = Path(report_dir) / SCATTER_CSV
    if not path.is_file():
        raise FileNotFoundError(f"missing {SCATTER_CSV} under {report_dir} (run the evaluate stage first)")
    frame = pd.read_csv(path)
    rows = frame[frame["method"] == method]
    if rows.empty:
        raise DataError(f"{path} has no rows for method '{method}'")
    return rows["true_ahi"].astype(float).tolist(), rows["estimated_ahi"].astype(float).tolist()


def render_plot(kind, out_path, session_dir=None, spectrogram=None, detections=None, report_dir=None, method="fused"):
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind '{kind}'; expected one of {', '.join(PLOT_KINDS)}")
    if kind in ("spectrogram", "timeline") and session_dir is None:
        raise ConfigError(f"the {kind} plot needs --session")
    if kind in ("scatter", "bland_altman") and report_dir is None:
        raise ConfigError(f"the {kind} plot needs --report")

    if kind == "spectrogram":
        session = load_session(session_dir, with_beat=False)
        fig = build_spectrogram_figure(_spectrogram_for_plot(session_dir, spectrogram), session.events)
    elif kind == "timeline":
        session = load_session(session_dir, with_beat=False)
        segments = read_segments(detections, detections=True) if detections is not None else []
        fig = build_timeline_figure(session.events, segments, session.duration_s, title=session.id)
    elif kind == "scatter":
        fig = build_scatter_figure(*_report_columns(report_dir, method), title=method)
    else:
        fig = build_bland_altman_figure(*_report_columns(report_dir, method), title=method)
    return save_svg(fig, out_path)


def stage_plot(paths: dict[str, Path], methods, timeline_subjects=2) -> list[Path]:
    out = paths["plot"]
    written = []
    session_dirs = list_session_dirs(paths["simulate"])[:timeline_subjects]
    for session_dir in session_dirs:
        sid = session_dir.name
        spec_path = _spectrogram_path(paths["preprocess"], sid)
        written.append(render_plot("spectrogram", out / f"spectrogram_{sid}.svg", session_dir,
                                   spectrogram=spec_path if spec_path.is_file() else None))
        for method, directory, name in (("radar", paths["detect"], DETECTIONS_NAME), ("fused", paths["fuse"], FUSED_NAME)):
            det_path = directory / sid / name
            if method in methods and det_path.is_file():
                written.append(render_plot("timeline", out / f"timeline_{method}_{sid}.svg", session_dir,
                                           detections=det_path))
    for method in methods:
        written.append(render_plot("scatter", out / f"scatter_{method}.svg", report_dir=paths["evaluate"], method=method))
        written.append(render_plot("bland_altman", out / f"bland_altman_{method}.svg",
                                   report_dir=paths["evaluate"], method=method))
    emit_progress("PLOT", 100, f"Wrote {len(written)} figure(s).")
    return written


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    config = _with_overrides(load_config(args.config, CohortConfig), seed=args.seed, n_subjects=args.subjects)
    params = load_optional_config(args.preprocess_config, PreprocessParams)
    stage_simulate(config, args.out, workers=args.workers, store_beat=not args.no_store_beat, preprocess_params=params)


def cmd_preprocess(args):
    stage_preprocess(args.cohort, args.out, load_optional_config(args.config, PreprocessParams), args.workers)


def cmd_train(args):
    arch = load_optional_config(args.arch, ArchitectureConfig)
    config = _with_overrides(
        load_optional_config(args.config, TrainConfig), epochs=args.epochs, folds=args.folds, seed=args.seed
    )
    stage_train(args.cohort, args.spectrograms, args.out, arch, config, threads=args.threads)


def cmd_detect(args):
    stage_detect(args.cohort, args.spectrograms, args.models, args.out, args.workers, args.score_floor, args.threads)


def cmd_gridsearch(args):
    base = load_optional_config(args.config, FusionParams)
    stage_gridsearch(args.cohort, args.detections, args.out, base, args.models,
                     args.t1_grid, args.t2_grid, args.icc_variant, args.workers)


def cmd_fuse(args):
    base = load_optional_config(args.config, FusionParams)
    selection = read_json(args.thresholds, ThresholdSelection) if args.thresholds else None
    overrides = {"alpha": args.alpha, "beta": args.beta, "t1": args.t1, "t2": args.t2}
    stage_fuse(args.cohort, args.detections, args.out, base, selection, args.models, overrides)


def cmd_evaluate(args):
    stage_evaluate(args.cohort, args.out, args.methods, args.detections, args.fused,
                   args.decision_threshold, args.icc_variant, args.iou)


def cmd_plot(args):
    render_plot(args.kind, args.out, args.session, args.spectrogram, args.detections, args.report, args.method)


def cmd_run(args):
    """Whole pipeline in one workspace, skipping stages whose artifacts still validate."""
    config_path = Path(args.config).resolve()
    pipeline = load_pipeline_config(config_path)
    output_dir = _resolve_output_dir(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = _artifact_paths(output_dir)
    paths["stage_state"].parent.mkdir(parents=True, exist_ok=True)

    emit_progress("INIT", 0, f"Workspace {output_dir}")
    loaded = _read_json_file(paths["stage_state"], default={}, model=StageState)
    stage_state = loaded.model_dump() if isinstance(loaded, StageState) else {}

    previous = stage_state.get("pipeline_config")
    if previous and previous != str(config_path) and args.stage is None:
        logger.warning("Existing stage_state.json is for %s, but current config is %s. Starting fresh.",
                       previous, config_path)
        stage_state = {}

    forced = set()
    if args.redo_stage:
        forced = set(invalidate_stages(args.redo_stage, output_dir, stage_state))
        _write_json_file(paths["stage_state"], stage_state)

    def _should_run(stage_name):
        if args.stage is not None:
            return stage_name == args.stage
        if args.force or stage_name in forced:
            return True
        return not validate_stage_artifacts(stage_name, output_dir)

    cohort = _with_overrides(load_config(pipeline.cohort_config, CohortConfig), seed=pipeline.seed)
    preprocess_params = load_optional_config(pipeline.preprocess_config, PreprocessParams)
    arch = load_config(pipeline.architecture_config, ArchitectureConfig)
    train_config = _with_overrides(load_config(pipeline.train_config, TrainConfig),
                                   seed=pipeline.seed, folds=pipeline.folds)
    fusion = load_config(pipeline.fusion_config, FusionParams)

    stages = {
        "simulate": lambda: stage_simulate(cohort, paths["simulate"], pipeline.workers, pipeline.store_beat,
                                           preprocess_params),
        "preprocess": lambda: stage_preprocess(paths["simulate"], paths["preprocess"], preprocess_params,
                                               pipeline.workers),
        "train": lambda: stage_train(paths["simulate"], paths["preprocess"], paths["train"], arch, train_config,
                                     pipeline.threads),
        "detect": lambda: stage_detect(paths["simulate"], paths["preprocess"], paths["train"], paths["detect"],
                                       pipeline.workers, threads=pipeline.threads),
        "gridsearch": lambda: stage_gridsearch(paths["simulate"], paths["detect"], paths["gridsearch"], fusion,
                                               paths["train"], icc_variant=pipeline.icc_variant,
                                               workers=pipeline.workers),
        "fuse": lambda: stage_fuse(paths["simulate"], paths["detect"], paths["fuse"], fusion,
                                   read_json(paths["gridsearch"] / THRESHOLDS_NAME, ThresholdSelection),
                                   paths["train"]),
        "evaluate": lambda: stage_evaluate(paths["simulate"], paths["evaluate"], pipeline.methods, paths["detect"],
                                           paths["fuse"], fusion.decision_threshold, pipeline.icc_variant,
                                           pipeline.iou_threshold),
        "plot": lambda: stage_plot(paths, pipeline.methods, pipeline.timeline_subjects),
    }

    for stage_name in PIPELINE_ORDER:
        if not _should_run(stage_name):
            logger.info("Stage %s: artifacts valid, skipping.", stage_name)
            continue
        logger.info("Stage %s: running.", stage_name)
        stages[stage_name]()
        _mark_stage_complete(stage_state, stage_name, {"path": paths[stage_name]})
        _persist_state(paths["stage_state"], stage_state, config_path, output_dir, args.stage)

    emit_progress("COMPLETE", 100, f"Pipeline finished in {output_dir}.")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="ROSA - radar and SpO2 sleep apnea event detection pipeline on simulated sessions"
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: ROSA_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate a cohort of radar/SpO2 sessions")
    p.add_argument("--config", required=True, help="Cohort config JSON")
    p.add_argument("--out", required=True, help="Cohort output directory")
    p.add_argument("--seed", type=int, default=None, help="Override the config seed")
    p.add_argument("--subjects", type=int, default=None, help="Override the number of subjects")
    p.add_argument("--preprocess-config", default=None, help="Preprocess params used with --no-store-beat")
    p.add_argument("--no-store-beat", action="store_true", help="Store spectrograms instead of raw beat data")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="Beat matrices -> three-channel spectrograms")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True, help="Spectrogram directory")
    p.add_argument("--config", default=None, help="Preprocess params JSON")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="Train one detector per cross-validation fold")
    p.add_argument("--cohort", required=True)
    p.add_argument("--spectrograms", required=True)
    p.add_argument("--out", required=True, help="Models directory")
    p.add_argument("--arch", default=None, help="Architecture config JSON")
    p.add_argument("--config", default=None, help="Training config JSON")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="Run held-out fold models over every session")
    p.add_argument("--cohort", required=True)
    p.add_argument("--spectrograms", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True, help="Detections directory")
    p.add_argument("--score-floor", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("gridsearch", help="Search fusion thresholds T1/T2 maximising ICC")
    p.add_argument("--cohort", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="Directory for thresholds.json and grid.csv")
    p.add_argument("--models", default=None, help="Models directory (folds.json) for per-fold thresholds")
    p.add_argument("--config", default=None, help="Fusion params JSON")
    p.add_argument("--t1-grid", type=_parse_grid, default=None, help="e.g. 2:8:0.5 or 3,4,5")
    p.add_argument("--t2-grid", type=_parse_grid, default=None, help="e.g. 0.5:4:0.5")
    p.add_argument("--icc-variant", choices=("2,1", "3,1", "1,1"), default="2,1")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("fuse", help="Rescore radar detections with SpO2 desaturation features")
    p.add_argument("--cohort", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="Fused detections directory")
    p.add_argument("--config", default=None, help="Fusion params JSON")
    p.add_argument("--thresholds", default=None, help="thresholds.json from gridsearch")
    p.add_argument("--models", default=None, help="Models directory (folds.json) to pick per-fold thresholds")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--t1", type=float, default=None)
    p.add_argument("--t2", type=float, default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="AHI agreement, AP and diagnostic report per method")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True, help="Report directory")
    p.add_argument("--methods", type=_parse_methods, default=list(METHODS), help="e.g. odi3,radar,fused")
    p.add_argument("--detections", default=None)
    p.add_argument("--fused", default=None)
    p.add_argument("--decision-threshold", type=float, default=0.5)
    p.add_argument("--icc-variant", choices=("2,1", "3,1", "1,1"), default="2,1")
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="Render an SVG figure")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", required=True, help="Output .svg path")
    p.add_argument("--session", default=None, help="Session directory (spectrogram, timeline)")
    p.add_argument("--spectrogram", default=None, help=".spec file (spectrogram)")
    p.add_argument("--detections", default=None, help="detections.jsonl (timeline)")
    p.add_argument("--report", default=None, help="Report directory (scatter, bland_altman)")
    p.add_argument("--method", choices=METHODS, default="fused")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("run", help="Run the whole pipeline with stage checkpointing")
    p.add_argument("--config", required=True, help="Pipeline config JSON")
    p.add_argument("--output-dir", default=None,
                   help="Workspace directory (default: ROSA_WORKSPACE_DIR, data/config.json or ./Workspaces)")
    p.add_argument("--stage", type=_parse_stage, default=None, help="Run only the specified stage and exit")
    p.add_argument("--redo-stage", type=_parse_stage, default=None,
                   help="Redo the specified stage and invalidate all downstream stage artifacts")
    p.add_argument("--force", action="store_true", help="Re-run stages even if artifacts exist")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())
    if args.command == "run":
        print_startup_banner(load_versions())

    try:
        args.func(args)
    except (RosaError, FileNotFoundError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        sys.exit(exit_code_for(exc))
    return 0


if __name__ == "__main__":
    main()
