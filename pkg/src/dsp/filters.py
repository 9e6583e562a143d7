# src/dsp/filters.py
"""Butterworth designs for slow-time filtering and their analytic responses."""
import numpy as np
from scipy import signal

from src.errors import ConfigError


def _nyquist(fs: float) -> float:
    if fs <= 0:
        raise ConfigError(f"sampling rate must be > 0, got {fs}")
    return fs / 2.0


def design_highpass(cutoff_hz: float, fs: float, order: int = 4) -> np.ndarray:
    nyquist = _nyquist(fs)
    if not 0 < cutoff_hz < nyquist:
        raise ConfigError(f"high-pass cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz at fs={fs} Hz")
    return signal.butter(order, cutoff_hz, btype="highpass", fs=fs, output="sos")


def design_bandpass(low_hz: float, high_hz: float, fs: float, order: int = 4) -> np.ndarray:
    nyquist = _nyquist(fs)
    if not 0 < low_hz < high_hz < nyquist:
        raise ConfigError(
            f"band edges must satisfy 0 < low < high < {nyquist} Hz, got [{low_hz}, {high_hz}]"
        )
    return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")


def frequency_response(sos: np.ndarray, freqs_hz, fs: float, zero_phase: bool = True) -> np.ndarray:
    """Magnitude response at *freqs_hz*.

    Forward-backward filtering squares the magnitude, so with zero_phase the
    result is |H(f)|^2.
    """
    freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    _, h = signal.sosfreqz(sos, worN=freqs, fs=fs)
    magnitude = np.abs(h)
    return magnitude**2 if zero_phase else magnitude


def _default_padlen(sos: np.ndarray) -> int:
    n_sections = sos.shape[0]
    trailing_zeros = min(int((sos[:, 2] == 0).sum()), int((sos[:, 5] == 0).sum()))
    return 3 * (2 * n_sections + 1 - trailing_zeros)


def zero_phase_filter(sos: np.ndarray, data: np.ndarray, axis: int = -1) -> np.ndarray:
    """sosfiltfilt along *axis*; complex input is filtered as real and imaginary parts."""
    n = data.shape[axis]
    padlen = min(_default_padlen(sos), max(n - 1, 0))
    if np.iscomplexobj(data):
        real = signal.sosfiltfilt(sos, data.real, axis=axis, padlen=padlen)
        imag = signal.sosfiltfilt(sos, data.imag, axis=axis, padlen=padlen)
        return real + 1j * imag
    return signal.sosfiltfilt(sos, data, axis=axis, padlen=padlen)
