"""Synthetic reverberant, noisy mixtures with exact ground-truth components."""

import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.signal import butter, fftconvolve, lfilter

from phm_engine.exceptions import DegenerateSnrError, ShapeMismatchError
from phm_engine.schemas import SAMPLE_RATE, RirParams, ScenarioParams, ScenarioRanges
from phm_engine.spectral import SignalBuffer

logger = logging.getLogger(__name__)

DECAY_60DB = 6.908
F0_RANGE_HZ = (100.0, 250.0)
HARMONICS = 8
PEAK_LEVEL = 0.9


class MixtureTruth(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: SignalBuffer
    y_d: SignalBuffer
    y_r: SignalBuffer
    y_n: SignalBuffer
    snr_db: float

    @property
    def reverberant(self) -> np.ndarray:
        return self.y_d.samples + self.y_r.samples

    def measured_snr_db(self) -> float:
        return float(
            10.0 * np.log10(np.sum(self.reverberant**2) / np.sum(self.y_n.samples**2))
        )

    def scaled(self, gain: float) -> "MixtureTruth":
        return _closed_mixture(
            gain * self.y_d.samples, gain * self.y_r.samples, gain * self.x.samples, self.snr_db
        )


def _closed_mixture(y_d: np.ndarray, y_r: np.ndarray, x: np.ndarray, snr_db: float) -> MixtureTruth:
    # noise is whatever closes the sum exactly in floating point
    y_n = (x - y_d) - y_r
    return MixtureTruth(
        x=SignalBuffer(samples=x, component="mixture"),
        y_d=SignalBuffer(samples=y_d, component="direct"),
        y_r=SignalBuffer(samples=y_r, component="reverb"),
        y_n=SignalBuffer(samples=y_n, component="noise"),
        snr_db=snr_db,
    )


def rir_envelope(params: RirParams) -> np.ndarray:
    t = np.arange(params.tail_length)
    return np.exp(-DECAY_60DB * (t + 1) / (params.t60 * SAMPLE_RATE))


def synth_rir(params: RirParams) -> Tuple[np.ndarray, np.ndarray]:
    """Direct-path impulse and a seeded exponentially decaying reflection tail, on disjoint supports."""
    length = params.direct_delay + params.gap + params.tail_length
    h_d = np.zeros(length)
    h_d[params.direct_delay] = params.direct_gain
    rng = np.random.default_rng(params.seed)
    h_r = np.zeros(length)
    tail_start = params.direct_delay + params.gap
    h_r[tail_start:] = params.tail_gain * rng.standard_normal(params.tail_length) * rir_envelope(params)
    return h_d, h_r


def mix(
    dry: SignalBuffer, h_d: np.ndarray, h_r: np.ndarray, noise: SignalBuffer, snr_db: float
) -> MixtureTruth:
    n = len(dry)
    if len(noise) < n:
        raise ShapeMismatchError(f"shape mismatch: noise has {len(noise)} samples, need {n}")
    y_d = fftconvolve(dry.samples, h_d)[:n]
    y_r = fftconvolve(dry.samples, h_r)[:n]
    source_energy = np.sum((y_d + y_r) ** 2)
    noise_samples = noise.samples[:n]
    noise_energy = np.sum(noise_samples**2)
    if source_energy == 0.0 or noise_energy == 0.0:
        raise DegenerateSnrError(
            f"degenerate SNR: reverberant energy {source_energy:g}, noise energy {noise_energy:g}"
        )
    scale = np.sqrt(source_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))
    x = y_d + y_r + scale * noise_samples
    return _closed_mixture(y_d, y_r, x, snr_db)


def _streams(seed: int):
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(4)]


def draw_scenario_params(seed: int, ranges: ScenarioRanges = ScenarioRanges()) -> ScenarioParams:
    rng = _streams(seed)[0]
    return ScenarioParams(
        seed=seed,
        snr_db=float(rng.uniform(*ranges.snr_db)),
        t60=float(rng.uniform(*ranges.t60)),
        direct_delay=int(rng.integers(ranges.direct_delay[0], ranges.direct_delay[1] + 1)),
        f0_hz=float(rng.uniform(*F0_RANGE_HZ)),
    )


def harmonic_source(rng: np.random.Generator, length: int, f0_hz: float) -> SignalBuffer:
    """Voiced-speech stand-in: harmonic tone with vibrato, 4 Hz syllabic envelope and breath noise."""
    t = np.arange(length) / SAMPLE_RATE
    vibrato = 1.0 + 0.02 * np.sin(2.0 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2.0 * np.pi * f0_hz * np.cumsum(vibrato) / SAMPLE_RATE
    tone = sum(
        np.sin(h * phase + rng.uniform(0.0, 2.0 * np.pi)) / h
        for h in range(1, HARMONICS + 1)
        if h * f0_hz < SAMPLE_RATE / 2
    )
    syllables = 0.5 * (1.0 - np.cos(2.0 * np.pi * 4.0 * t + rng.uniform(0.0, 2.0 * np.pi)))
    b, a = butter(4, 0.25)
    breath = lfilter(b, a, rng.standard_normal(length))
    samples = syllables * tone + 0.05 * breath
    return SignalBuffer(samples=0.5 * samples / np.max(np.abs(samples)))


def coloured_noise(rng: np.random.Generator, length: int) -> SignalBuffer:
    pole = rng.uniform(-0.5, 0.95)
    samples = lfilter([1.0], [1.0, -pole], rng.standard_normal(length))
    return SignalBuffer(samples=samples / np.std(samples))


def sample_scenario(seed: int, ranges: ScenarioRanges = ScenarioRanges()) -> MixtureTruth:
    params = draw_scenario_params(seed, ranges)
    _, dry_rng, noise_rng, rir_rng = _streams(seed)
    length = ranges.segment_length
    rir = RirParams(
        direct_delay=params.direct_delay,
        t60=params.t60,
        tail_length=int(np.ceil(params.t60 * SAMPLE_RATE)),
        seed=int(rir_rng.integers(0, 2**31 - 1)),
    )
    h_d, h_r = synth_rir(rir)
    dry = harmonic_source(dry_rng, length, params.f0_hz)
    noise = coloured_noise(noise_rng, length)
    truth = mix(dry, h_d, h_r, noise, params.snr_db)
    logger.debug(
        "scenario %d: snr %.2f dB, t60 %.2f s, delay %d", seed, params.snr_db, params.t60, params.direct_delay
    )
    return truth.scaled(PEAK_LEVEL / np.max(np.abs(truth.x.samples)))
