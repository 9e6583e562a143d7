#!/usr/bin/env python3
"""Full synthetic-cohort run with the acceptance checks.

Runs the default 24-subject pipeline and checks the held-out fused
results (ICC >= 0.90, AP@0.5 >= 0.60). It then runs the artifact-heavy
variant and checks that fusion does not lose to radar-only on either
metric.

Usage:
    .venv/bin/python3 scripts/reproduce_cohort.py [--workspace DIR] [--skip-artifact-heavy]
"""

import argparse
import logging
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.main import main as rosa_main  # noqa: E402
from src.metrics.report import REPORT_JSON, CohortReport  # noqa: E402
from src.session.store import read_json  # noqa: E402

logger = logging.getLogger("reproduce_cohort")

MIN_FUSED_ICC = 0.90
MIN_FUSED_AP50 = 0.60


def _run(config: Path, workspace: Path) -> CohortReport:
    rosa_main(["run", "--config", str(config), "--output-dir", str(workspace)])
    return read_json(workspace / "report" / REPORT_JSON, CohortReport)


def _method(report: CohortReport, name: str):
    return next(m for m in report.methods if m.method == name)


def check_default(report: CohortReport) -> list[str]:
    fused = _method(report, "fused")
    failures = []
    if fused.icc is None or fused.icc < MIN_FUSED_ICC:
        failures.append(f"fused ICC {fused.icc} < {MIN_FUSED_ICC}")
    if fused.ap50 is None or fused.ap50 < MIN_FUSED_AP50:
        failures.append(f"fused AP50 {fused.ap50} < {MIN_FUSED_AP50}")
    return failures


def check_artifact_heavy(report: CohortReport) -> list[str]:
    fused, radar = _method(report, "fused"), _method(report, "radar")
    failures = []
    if None in (fused.ap50, radar.ap50) or fused.ap50 < radar.ap50:
        failures.append(f"fused AP50 {fused.ap50} below radar-only {radar.ap50}")
    if None in (fused.icc, radar.icc) or fused.icc < radar.icc:
        failures.append(f"fused ICC {fused.icc} below radar-only {radar.icc}")
    return failures


def main() -> int:
    parser = argparse.ArgumentParser(description="Reproduce the synthetic-cohort acceptance run")
    parser.add_argument("--workspace", default=str(PROJECT_ROOT / "Workspaces" / "acceptance"))
    parser.add_argument("--skip-artifact-heavy", action="store_true")
    args = parser.parse_args()

    workspace = Path(args.workspace)
    failures = check_default(_run(PROJECT_ROOT / "configs" / "pipeline_default.json", workspace / "default"))
    if not args.skip_artifact_heavy:
        failures += check_artifact_heavy(
            _run(PROJECT_ROOT / "configs" / "pipeline_artifact_heavy.json", workspace / "artifact_heavy")
        )

    for failure in failures:
        logger.error("FAIL: %s", failure)
    if not failures:
        logger.info("All acceptance checks passed.")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
