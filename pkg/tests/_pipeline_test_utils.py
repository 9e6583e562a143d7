import importlib
import json
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np

from src.session.model import DetectedSegment, EventAnnotation, SleepSession, SpO2Trace
from src.session.store import save_session

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIGS_DIR = PROJECT_ROOT / "configs"


def load_main_module():
    if "src.main" in sys.modules:
        del sys.modules["src.main"]
    return importlib.import_module("src.main")


def run_main(main_module, args: list[str]) -> int:
    """Run the CLI with *args*; returns the exit code (0 when main returns)."""
    with patch.object(sys, "argv", ["main.py", *args]):
        try:
            main_module.main()
        except SystemExit as exc:
            return int(exc.code or 0)
    return 0


def flat_trace(duration_s: float, value: float = 97.0, rate: float = 1.0) -> np.ndarray:
    return np.full(int(round(duration_s * rate)), value, dtype=np.float64)


def add_dip(samples: np.ndarray, start: int, depth: float, fall: int = 10, hold: int = 5, rise: int = 10) -> np.ndarray:
    """Trapezoid desaturation starting at index *start*; plateaus survive the median-3 smoothing."""
    base = samples[start]
    out = samples.copy()
    ramp_down = np.linspace(base, base - depth, fall + 1)[1:]
    ramp_up = np.linspace(base - depth, base, rise + 1)[1:]
    shape = np.concatenate([ramp_down, np.full(hold, base - depth), ramp_up])
    out[start + 1 : start + 1 + shape.size] = shape
    return out


def make_session(
    session_id: str,
    events=(),
    duration_s: float = 600.0,
    spo2: np.ndarray | None = None,
) -> SleepSession:
    samples = flat_trace(duration_s) if spo2 is None else spo2
    return SleepSession(
        id=session_id,
        spo2=SpO2Trace(samples, 1.0),
        tst=duration_s / 3600.0,
        duration_s=duration_s,
        events=tuple(EventAnnotation(*e) if not isinstance(e, EventAnnotation) else e for e in events),
    )


def write_sessions(cohort_dir: Path, sessions) -> list[Path]:
    return [save_session(s, Path(cohort_dir) / s.id) for s in sessions]


def det(category: str, score: float, t_start: float, t_end: float) -> DetectedSegment:
    return DetectedSegment(category, score, t_start, t_end)


def tiny_architecture(**overrides):
    from src.detector.config import ArchitectureConfig

    values = json.loads((CONFIGS_DIR / "architecture_tiny.json").read_text())
    values.update(overrides)
    return ArchitectureConfig(**values)


def random_spectrogram(n_frames: int, seed: int = 0, range_bins: int = 32):
    from src.dsp.spectrogram import ThreeChannelSpectrogram

    data = np.random.default_rng(seed).standard_normal((3, range_bins, n_frames)).astype(np.float32)
    return ThreeChannelSpectrogram(data=data, frame_rate=1.0, bin_spacing=0.05, first_bin=4)
