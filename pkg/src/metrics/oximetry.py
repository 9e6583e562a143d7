# src/metrics/oximetry.py
from src.fusion.desaturation import ODI_REVERSAL_PCT, OD_THRESHOLD_PCT, scan_desaturations, smooth_trace
from src.metrics.agreement import compute_ahi
from src.session.model import SpO2Trace


def count_desaturations(
    trace: SpO2Trace,
    drop_pct: float = OD_THRESHOLD_PCT,
    recovery_pct: float = ODI_REVERSAL_PCT,
    smoothing: int = 3,
) -> int:
    """Peak-to-nadir drops of at least *drop_pct*; a drop ends once SpO2 recovers *recovery_pct*."""
    swings = scan_desaturations(smooth_trace(trace.samples, smoothing), recovery_pct)
    return sum(1 for s in swings if s.drop >= drop_pct)


def odi3(trace: SpO2Trace, tst: float, recovery_pct: float = ODI_REVERSAL_PCT, smoothing: int = 3) -> float:
    """3% oxygen desaturation index in events per hour."""
    return compute_ahi(range(count_desaturations(trace, OD_THRESHOLD_PCT, recovery_pct, smoothing)), tst)
