# src/dsp/preprocess.py
import logging

from pydantic import BaseModel, Field, model_validator

from src.dsp.radar import (
    bandpass_slow_time,
    doppler_principal,
    highpass_slow_time,
    power_spectrogram,
    range_transform,
)
from src.dsp.spectrogram import SpectrogramKind, ThreeChannelSpectrogram, concat_channels
from src.errors import DataError
from src.session.model import BeatMatrix, SleepSession

logger = logging.getLogger(__name__)


class PreprocessParams(BaseModel):
    window: str = "hann"
    filter_order: int = Field(default=4, ge=1, le=10)
    highpass_cutoff_hz: float = Field(default=5.0, gt=0)
    band_low_hz: float = Field(default=0.1, gt=0)
    band_high_hz: float = Field(default=5.0, gt=0)
    power_window_s: float = Field(default=4.0, gt=0)
    power_hop_s: float = Field(default=1.0, gt=0)
    doppler_window_s: float = Field(default=16.0, gt=0)
    doppler_hop_s: float = Field(default=1.0, gt=0)
    doppler_gate: float = Field(default=1e-10, ge=0)
    range_start_bin: int = Field(default=4, ge=0)
    range_stop_bin: int = Field(default=36, gt=0)
    normalize: bool = True

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.band_low_hz >= self.band_high_hz:
            raise ValueError("band_low_hz must be below band_high_hz")
        if self.range_stop_bin <= self.range_start_bin:
            raise ValueError("range_stop_bin must exceed range_start_bin")
        if self.power_window_s < self.power_hop_s or self.doppler_window_s < self.doppler_hop_s:
            raise ValueError("spectrogram windows must be at least as long as their hop")
        if self.power_hop_s != self.doppler_hop_s:
            raise ValueError("power and Doppler hops must match so the channels align")
        return self


def preprocess_beat(beat: BeatMatrix, params: PreprocessParams | None = None) -> ThreeChannelSpectrogram:
    params = params or PreprocessParams()
    rtm = range_transform(beat, params.window).crop(params.range_start_bin, params.range_stop_bin)

    movement = power_spectrogram(
        highpass_slow_time(rtm, params.highpass_cutoff_hz, params.filter_order),
        params.power_window_s,
        params.power_hop_s,
        kind=SpectrogramKind.MOVEMENT,
    )
    breathing_band = bandpass_slow_time(rtm, params.band_low_hz, params.band_high_hz, params.filter_order)
    breathing = power_spectrogram(
        breathing_band,
        params.power_window_s,
        params.power_hop_s,
        kind=SpectrogramKind.BREATHING,
    )
    doppler = doppler_principal(
        breathing_band,
        params.doppler_window_s,
        params.doppler_hop_s,
        params.doppler_gate,
        band=(params.band_low_hz, params.band_high_hz),
    )
    return concat_channels(movement, breathing, doppler, normalize=params.normalize)


def preprocess_session(session: SleepSession, params: PreprocessParams | None = None) -> ThreeChannelSpectrogram:
    if session.beat is None:
        raise DataError(f"session {session.id}: no radar data (beat matrix absent)")
    spec = preprocess_beat(session.beat, params)
    logger.debug("Preprocessed %s -> %s", session.id, spec.data.shape)
    return spec
