# src/metrics/report.py
"""
Cohort evaluation: one agreement row per method (ODI3-only, radar-only,
fused), a severity-group table and the per-subject CSV surfaces.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.metrics.agreement import (
    DIAGNOSTIC_THRESHOLDS,
    IccVariant,
    bland_altman,
    compute_ahi,
    diagnostic_metrics,
    icc,
)
from src.metrics.detection import average_precision, pooled_average_precision
from src.metrics.oximetry import odi3
from src.session.model import EVENT_CATEGORIES, DetectedSegment, EventAnnotation, SpO2Trace
from src.session.store import write_json

logger = logging.getLogger(__name__)

METHODS = ("odi3", "radar", "fused")
SEVERITY_BOUNDS = (("healthy", 0.0, 5.0), ("mild", 5.0, 15.0), ("moderate", 15.0, 30.0), ("severe", 30.0, float("inf")))
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
BLAND_ALTMAN_CSV = "bland_altman.csv"
SCATTER_CSV = "scatter.csv"


@dataclass(frozen=True, slots=True)
class EvaluationSession:
    id: str
    tst: float
    events: tuple[EventAnnotation, ...]
    spo2: SpO2Trace
    radar: tuple[DetectedSegment, ...] = ()
    fused: tuple[DetectedSegment, ...] = ()

    @property
    def true_ahi(self) -> float:
        return compute_ahi(self.events, self.tst)


class SubjectRow(BaseModel):
    subject: str
    true_ahi: float
    estimated_ahi: float
    ap50: float | None = None


class DiagnosticRow(BaseModel):
    threshold: float
    sensitivity: float | None
    specificity: float | None
    accuracy: float
    kappa: float | None
    tp: int
    tn: int
    fp: int
    fn: int


class BlandAltmanRow(BaseModel):
    bias: float
    sd: float
    loa_lower: float
    loa_upper: float
    n: int


class AgreementReport(BaseModel):
    method: str
    icc: float | None
    icc_variant: str
    ap50: float | None = None
    ap50_class_aware: float | None = None
    ap50_per_category: dict[str, float | None] = Field(default_factory=dict)
    subjects: list[SubjectRow] = Field(default_factory=list)
    diagnostics: list[DiagnosticRow] = Field(default_factory=list)
    bland_altman: BlandAltmanRow | None = None


class SeverityRow(BaseModel):
    group: str
    n_subjects: int
    mean_true_ahi: float | None
    mean_estimated_ahi: dict[str, float | None]


class CohortReport(BaseModel):
    decision_threshold: float
    icc_variant: str
    iou_threshold: float
    methods: list[AgreementReport]
    severity: list[SeverityRow] = Field(default_factory=list)


@dataclass(slots=True)
class _MethodInputs:
    estimates: list[float]
    detections: list[tuple[DetectedSegment, ...]] | None = None


def severity_group(ahi: float) -> str:
    for name, lo, hi in SEVERITY_BOUNDS:
        if lo <= ahi < hi:
            return name
    return SEVERITY_BOUNDS[-1][0]


def _counted(detections: Sequence[DetectedSegment], threshold: float) -> list[DetectedSegment]:
    return [d for d in detections if d.score >= threshold]


def _method_inputs(sessions: Sequence[EvaluationSession], method: str, threshold: float) -> _MethodInputs:
    if method == "odi3":
        return _MethodInputs([odi3(s.spo2, s.tst) for s in sessions])
    if method == "radar":
        detections = [s.radar for s in sessions]
    elif method == "fused":
        detections = [s.fused for s in sessions]
    else:
        raise ValueError(f"unknown evaluation method {method!r}")
    estimates = [compute_ahi(_counted(d, threshold), s.tst) for d, s in zip(detections, sessions)]
    return _MethodInputs(estimates, detections)


def evaluate_method(
    sessions: Sequence[EvaluationSession],
    method: str,
    decision_threshold: float = 0.5,
    icc_variant: IccVariant = "2,1",
    iou_threshold: float = 0.5,
) -> AgreementReport:
    inputs = _method_inputs(sessions, method, decision_threshold)
    truths = [s.true_ahi for s in sessions]
    pairs = list(zip(truths, inputs.estimates))

    subjects = []
    for i, s in enumerate(sessions):
        ap = None
        if inputs.detections is not None:
            ap = average_precision(inputs.detections[i], s.events, iou_threshold)
        subjects.append(SubjectRow(subject=s.id, true_ahi=truths[i], estimated_ahi=inputs.estimates[i], ap50=ap))

    report = AgreementReport(
        method=method,
        icc=icc(pairs, icc_variant) if len(pairs) >= 2 else None,
        icc_variant=icc_variant,
        subjects=subjects,
        diagnostics=[DiagnosticRow(**diagnostic_metrics(pairs, t).as_dict()) for t in DIAGNOSTIC_THRESHOLDS]
        if pairs
        else [],
        bland_altman=BlandAltmanRow(**bland_altman(pairs).as_dict()) if len(pairs) >= 2 else None,
    )
    if inputs.detections is not None:
        per_session = [(d, s.events) for d, s in zip(inputs.detections, sessions)]
        report.ap50 = pooled_average_precision(per_session, iou_threshold)
        report.ap50_class_aware = pooled_average_precision(per_session, iou_threshold, class_agnostic=False)
        report.ap50_per_category = {
            str(c): pooled_average_precision(
                [
                    ([d for d in dets if d.category is c], [g for g in events if g.category is c])
                    for dets, events in per_session
                ],
                iou_threshold,
            )
            for c in EVENT_CATEGORIES
        }
    return report


def severity_table(sessions: Sequence[EvaluationSession], reports: Sequence[AgreementReport]) -> list[SeverityRow]:
    rows = []
    for name, _, _ in SEVERITY_BOUNDS:
        members = [i for i, s in enumerate(sessions) if severity_group(s.true_ahi) == name]
        estimated = {
            r.method: float(np.mean([r.subjects[i].estimated_ahi for i in members])) if members else None
            for r in reports
        }
        rows.append(
            SeverityRow(
                group=name,
                n_subjects=len(members),
                mean_true_ahi=float(np.mean([sessions[i].true_ahi for i in members])) if members else None,
                mean_estimated_ahi=estimated,
            )
        )
    return rows


def evaluate_cohort(
    sessions: Sequence[EvaluationSession],
    methods: Sequence[str] = METHODS,
    decision_threshold: float = 0.5,
    icc_variant: IccVariant = "2,1",
    iou_threshold: float = 0.5,
) -> CohortReport:
    reports = [evaluate_method(sessions, m, decision_threshold, icc_variant, iou_threshold) for m in methods]
    for r in reports:
        logger.info("%-6s ICC=%s AP50=%s", r.method, _fmt(r.icc), _fmt(r.ap50))
    return CohortReport(
        decision_threshold=decision_threshold,
        icc_variant=icc_variant,
        iou_threshold=iou_threshold,
        methods=reports,
        severity=severity_table(sessions, reports),
    )


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def table_rows(report: CohortReport) -> list[dict]:
    rows = []
    for r in report.methods:
        row = {
            "method": r.method,
            "ap50": r.ap50,
            "ap50_class_aware": r.ap50_class_aware,
            "icc": r.icc,
            "bias": r.bland_altman.bias if r.bland_altman else None,
            "loa_lower": r.bland_altman.loa_lower if r.bland_altman else None,
            "loa_upper": r.bland_altman.loa_upper if r.bland_altman else None,
        }
        for d in r.diagnostics:
            suffix = f"{d.threshold:g}"
            row[f"sensitivity_{suffix}"] = d.sensitivity
            row[f"specificity_{suffix}"] = d.specificity
            row[f"accuracy_{suffix}"] = d.accuracy
            row[f"kappa_{suffix}"] = d.kappa
        rows.append(row)
    return rows


def write_report(report: CohortReport, out_dir) -> Path:
    """report.json, report.csv, bland_altman.csv and scatter.csv under *out_dir*."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / REPORT_JSON, report)
    pd.DataFrame(table_rows(report)).to_csv(out_dir / REPORT_CSV, index=False)

    scatter, differences = [], []
    for r in report.methods:
        for s in r.subjects:
            scatter.append({"method": r.method, "subject": s.subject, "true_ahi": s.true_ahi, "estimated_ahi": s.estimated_ahi})
            differences.append(
                {
                    "method": r.method,
                    "subject": s.subject,
                    "mean_ahi": (s.true_ahi + s.estimated_ahi) / 2.0,
                    "difference": s.estimated_ahi - s.true_ahi,
                }
            )
    pd.DataFrame(scatter, columns=["method", "subject", "true_ahi", "estimated_ahi"]).to_csv(
        out_dir / SCATTER_CSV, index=False
    )
    pd.DataFrame(differences, columns=["method", "subject", "mean_ahi", "difference"]).to_csv(
        out_dir / BLAND_ALTMAN_CSV, index=False
    )
    return out_dir
