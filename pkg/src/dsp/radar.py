# src/dsp/radar.py
"""
FMCW radar pre-processing: range FFT, slow-time filtering and the power /
Doppler spectrograms computed per range bin.
"""
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft
from scipy import signal

from src.dsp.filters import design_bandpass, design_highpass, zero_phase_filter
from src.dsp.spectrogram import Spectrogram, SpectrogramKind
from src.errors import ConfigError, DataError
from src.session.model import BeatMatrix, RangeTimeMatrix

logger = logging.getLogger(__name__)

RANGE_CHUNK_CHIRPS = 65536
DOPPLER_CHUNK_FRAMES = 1024
DOPPLER_MIN_WINDOW_SAMPLES = 32


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def range_transform(beat: BeatMatrix, window: str = "hann") -> RangeTimeMatrix:
    """Windowed fast-time FFT, one-sided (bins 0 .. N/2-1), transposed to (bin, chirp)."""
    n = beat.config.samples_per_chirp
    if not _is_power_of_two(n):
        raise DataError(f"samples_per_chirp must be a power of two, got {n}")
    taper = signal.get_window(window, n).astype(np.float32)
    n_bins = n // 2
    out = np.empty((n_bins, beat.n_chirps), dtype=np.complex64)
    for start in range(0, beat.n_chirps, RANGE_CHUNK_CHIRPS):
        stop = min(start + RANGE_CHUNK_CHIRPS, beat.n_chirps)
        chunk = np.asarray(beat.data[start:stop], dtype=np.complex64) * taper
        spectrum = sp_fft.fft(chunk, axis=1)
        out[:, start:stop] = spectrum[:, :n_bins].T
    return RangeTimeMatrix(
        data=out,
        bin_spacing=beat.config.range_resolution,
        slow_time_rate=beat.config.frame_rate,
    )


def highpass_slow_time(rtm: RangeTimeMatrix, cutoff: float = 5.0, order: int = 4) -> RangeTimeMatrix:
    sos = design_highpass(cutoff, rtm.slow_time_rate, order)
    return rtm.with_data(zero_phase_filter(sos, rtm.data, axis=1))


def bandpass_slow_time(rtm: RangeTimeMatrix, low: float = 0.1, high: float = 5.0, order: int = 4) -> RangeTimeMatrix:
    sos = design_bandpass(low, high, rtm.slow_time_rate, order)
    return rtm.with_data(zero_phase_filter(sos, rtm.data, axis=1))


def _frame_layout(rtm: RangeTimeMatrix, window_s: float, hop_s: float) -> tuple[int, np.ndarray]:
    fs = rtm.slow_time_rate
    if hop_s <= 0 or window_s < hop_s:
        raise ConfigError(f"window ({window_s} s) must be >= hop ({hop_s} s) > 0")
    width = int(round(window_s * fs))
    if width > rtm.n_chirps:
        raise DataError(
            f"window of {window_s} s ({width} samples) is longer than the recording ({rtm.n_chirps} samples)"
        )
    n_frames = int(np.floor(rtm.n_chirps / (hop_s * fs) + 1e-9))
    centers = np.rint(np.arange(n_frames) * hop_s * fs).astype(np.int64)
    return width, centers


def power_spectrogram(
    filtered: RangeTimeMatrix,
    window_s: float = 4.0,
    hop_s: float = 1.0,
    kind: SpectrogramKind = SpectrogramKind.BREATHING,
) -> Spectrogram:
    """Mean |x|^2 over a window centred at each hop; edge windows use the samples available."""
    if window_s * filtered.slow_time_rate < 2:
        raise ConfigError(f"power window of {window_s} s holds fewer than 2 samples")
    width, centers = _frame_layout(filtered, window_s, hop_s)
    n = filtered.n_chirps
    lo = np.clip(centers - width // 2, 0, n)
    hi = np.clip(centers - width // 2 + width, 0, n)

    energy = np.abs(filtered.data).astype(np.float64) ** 2
    cumulative = np.zeros((energy.shape[0], n + 1), dtype=np.float64)
    np.cumsum(energy, axis=1, out=cumulative[:, 1:])
    counts = np.maximum(hi - lo, 1)
    power = (cumulative[:, hi] - cumulative[:, lo]) / counts
    np.maximum(power, 0.0, out=power)
    return Spectrogram(
        data=power,
        frame_rate=1.0 / hop_s,
        bin_spacing=filtered.bin_spacing,
        kind=kind,
        first_bin=filtered.first_bin,
    )


def doppler_principal(
    bandpassed: RangeTimeMatrix,
    window_s: float = 16.0,
    hop_s: float = 1.0,
    gate: float = 1e-10,
    band: tuple[float, float] = (0.1, 5.0),
) -> Spectrogram:
    """Per (bin, window): |frequency| of the strongest STFT coefficient inside *band*.

    Windows are Hann-tapered and centred at k*hop_s; samples outside the
    recording count as zeros. Windows whose mean power is below *gate* emit 0.
    """
    fs = bandpassed.slow_time_rate
    if window_s * fs < DOPPLER_MIN_WINDOW_SAMPLES:
        raise ConfigError(
            f"Doppler window of {window_s} s holds fewer than {DOPPLER_MIN_WINDOW_SAMPLES} samples at {fs} Hz"
        )
    width, centers = _frame_layout(bandpassed, window_s, hop_s)
    freqs = sp_fft.fftfreq(width, d=1.0 / fs)
    in_band = (np.abs(freqs) >= band[0]) & (np.abs(freqs) <= band[1])
    if not np.any(in_band):
        raise ConfigError(f"no STFT bin falls inside {band} Hz with a {window_s} s window")
    band_idx = np.flatnonzero(in_band)
    band_freqs = np.abs(freqs[band_idx])
    taper = signal.get_window("hann", width)

    half = width // 2
    out = np.zeros((bandpassed.n_range_bins, centers.size), dtype=np.float64)
    for row in range(bandpassed.n_range_bins):
        series = np.asarray(bandpassed.data[row], dtype=np.complex128)
        padded = np.concatenate([np.zeros(half, series.dtype), series, np.zeros(width, series.dtype)])
        frames_view = sliding_window_view(padded, width)
        for start in range(0, centers.size, DOPPLER_CHUNK_FRAMES):
            idx = centers[start : start + DOPPLER_CHUNK_FRAMES]
            frames = frames_view[idx]
            window_power = np.mean(np.abs(frames) ** 2, axis=1)
            magnitude = np.abs(sp_fft.fft(frames * taper, axis=1)[:, band_idx])
            peak = band_freqs[np.argmax(magnitude, axis=1)]
            out[row, start : start + idx.size] = np.where(window_power >= gate, peak, 0.0)
    return Spectrogram(
        data=out,
        frame_rate=1.0 / hop_s,
        bin_spacing=bandpassed.bin_spacing,
        kind=SpectrogramKind.DOPPLER,
        first_bin=bandpassed.first_bin,
    )
