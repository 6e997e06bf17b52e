"""Time-frequency front end: framing, STFT/iSTFT, low-bin trimming and input features."""

import logging
from typing import Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.signal import get_window

from phm_engine.exceptions import InsufficientSamplesError, ShapeMismatchError
from phm_engine.schemas import FEATURE_CHANNELS, SAMPLE_RATE, StftConfig

logger = logging.getLogger(__name__)

EPS_MAG = 1e-7
# squared-window sums below this are treated as uncovered samples
WSS_FLOOR = 1e-10

Component = Literal["direct", "reverb", "noise", "mixture", "estimate", "remix"]


class SignalBuffer(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    component: Optional[Component] = None

    @field_validator("samples", mode="before")
    @classmethod
    def as_float_vector(cls, value):
        samples = np.asarray(value, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"mono samples expected, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        return samples

    @field_validator("sample_rate")
    @classmethod
    def fixed_rate(cls, value):
        if value != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {value}")
        return value

    def __len__(self) -> int:
        return self.samples.shape[0]

    def labelled(self, component: Component) -> "SignalBuffer":
        return SignalBuffer(samples=self.samples, component=component)


class ComplexSpectrogram(BaseModel):
    """Complex grid indexed (t, f)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bins: np.ndarray

    @field_validator("bins", mode="before")
    @classmethod
    def as_complex_grid(cls, value):
        bins = np.asarray(value)
        if bins.ndim != 2:
            raise ValueError(f"(frames, bins) grid expected, got shape {bins.shape}")
        return bins.astype(np.complex128, copy=False)

    @property
    def frame_count(self) -> int:
        return self.bins.shape[0]

    @property
    def bin_count(self) -> int:
        return self.bins.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bins.shape


class FeatureStack(BaseModel):
    """Channels: log-magnitude, demodulated phase (cos, sin), group delay, delta-phase."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    channels: np.ndarray

    @field_validator("channels", mode="before")
    @classmethod
    def check_layout(cls, value):
        channels = np.asarray(value, dtype=np.float64)
        if channels.ndim != 3 or channels.shape[0] != FEATURE_CHANNELS:
            raise ValueError(f"(5, frames, bins) features expected, got shape {channels.shape}")
        return channels

    @property
    def frame_count(self) -> int:
        return self.channels.shape[1]

    @property
    def bin_count(self) -> int:
        return self.channels.shape[2]

    def frames_last(self) -> np.ndarray:
        """(frames, bins, channels) view used by the network."""
        return np.moveaxis(self.channels, 0, -1)


def analysis_window(cfg: StftConfig) -> np.ndarray:
    return get_window("hann", cfg.window_size, fftbins=True)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    return (n_samples - cfg.window_size) // cfg.hop_size + 1


def stft(signal: SignalBuffer, cfg: StftConfig) -> ComplexSpectrogram:
    samples = signal.samples
    if samples.shape[0] < cfg.window_size:
        raise InsufficientSamplesError(
            f"insufficient samples: {samples.shape[0]} < window size {cfg.window_size}"
        )
    frames = sliding_window_view(samples, cfg.window_size)[:: cfg.hop_size]
    spectrum = np.fft.rfft(frames * analysis_window(cfg), n=cfg.fft_size, axis=-1)
    return ComplexSpectrogram(bins=spectrum)


def istft(spec: ComplexSpectrogram, cfg: StftConfig) -> SignalBuffer:
    if spec.bin_count != cfg.full_bin_count:
        raise ShapeMismatchError(
            f"shape mismatch: spectrogram has {spec.bin_count} bins, config expects "
            f"{cfg.full_bin_count} (restore trimmed bins first)"
        )
    window = analysis_window(cfg)
    frames = np.fft.irfft(spec.bins, n=cfg.fft_size, axis=-1)[:, : cfg.window_size]
    length = cfg.window_size + (spec.frame_count - 1) * cfg.hop_size
    output = np.zeros(length)
    norm = np.zeros(length)
    for index, frame in enumerate(frames):
        start = index * cfg.hop_size
        output[start : start + cfg.window_size] += frame * window
        norm[start : start + cfg.window_size] += window**2
    covered = norm > WSS_FLOOR
    output[covered] /= norm[covered]
    output[~covered] = 0.0
    return SignalBuffer(samples=output)


def analysis_padding(n_samples: int, cfg: StftConfig) -> Tuple[int, int]:
    """Zeros to add before/after a signal so every sample sees full overlap."""
    before = cfg.window_size - cfg.hop_size
    total = n_samples + 2 * before
    remainder = (total - cfg.window_size) % cfg.hop_size
    after = before + ((cfg.hop_size - remainder) % cfg.hop_size)
    return before, after


def padded_stft(signal: SignalBuffer, cfg: StftConfig) -> ComplexSpectrogram:
    before, after = analysis_padding(len(signal), cfg)
    return stft(SignalBuffer(samples=np.pad(signal.samples, (before, after))), cfg)


def cropped_istft(spec: ComplexSpectrogram, cfg: StftConfig, length: int) -> SignalBuffer:
    before, _ = analysis_padding(length, cfg)
    samples = istft(spec, cfg).samples
    return SignalBuffer(samples=samples[before : before + length])


def trim_low_bins(spec: ComplexSpectrogram, n: int) -> ComplexSpectrogram:
    if n < 0 or n >= spec.bin_count:
        raise ShapeMismatchError(
            f"cannot discard {n} bins from a spectrogram with {spec.bin_count} bins"
        )
    return ComplexSpectrogram(bins=spec.bins[:, n:])


def restore_low_bins(spec: ComplexSpectrogram, n: int) -> ComplexSpectrogram:
    if n < 0:
        raise ShapeMismatchError(f"cannot restore a negative bin count ({n})")
    return ComplexSpectrogram(bins=np.pad(spec.bins, ((0, 0), (n, 0))))


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - phase, 2.0 * np.pi)


def extract_features(spec: ComplexSpectrogram, cfg: StftConfig) -> FeatureStack:
    bins = spec.bins
    frames, bin_count = bins.shape
    magnitude = np.abs(bins)
    silent = magnitude == 0.0
    phase = np.where(silent, 0.0, np.angle(bins))

    # trimmed grids start above bin 0; the offset follows from the shape
    offset = cfg.full_bin_count - bin_count
    absolute_bin = np.arange(bin_count) + offset
    advance = 2.0 * np.pi * absolute_bin[None, :] * cfg.hop_size * np.arange(frames)[:, None] / cfg.fft_size
    demodulated = np.where(silent, 0.0, wrap_phase(phase - advance))

    group_delay = np.zeros_like(phase)
    group_delay[:, 1:] = wrap_phase(np.diff(phase, axis=1))
    delta_phase = np.zeros_like(phase)
    delta_phase[1:, :] = wrap_phase(np.diff(phase, axis=0))

    channels = np.stack(
        [
            np.log(magnitude + EPS_MAG),
            np.cos(demodulated),
            np.sin(demodulated),
            group_delay,
            delta_phase,
        ]
    )
    return FeatureStack(channels=channels)


def silence_features(frames: int, bin_count: int) -> FeatureStack:
    channels = np.zeros((FEATURE_CHANNELS, frames, bin_count))
    channels[0] = np.log(EPS_MAG)
    channels[1] = 1.0
    return FeatureStack(channels=channels)
