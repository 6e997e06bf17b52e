"""Single-band feedforward compressor with no lookahead."""

import numpy as np

from phm_engine.schemas import SAMPLE_RATE, DrcConfig
from phm_engine.spectral import SignalBuffer

ENVELOPE_FLOOR = 1e-12


def smoothing_coefficient(time_ms: float) -> float:
    return 1.0 - np.exp(-1.0 / (time_ms * SAMPLE_RATE / 1000.0))


class DynamicRangeCompressor:
    """Keeps the detector state between blocks, so one instance serves one stream."""

    def __init__(self, cfg: DrcConfig = DrcConfig()) -> None:
        self.cfg = cfg
        self.attack = smoothing_coefficient(cfg.attack_ms)
        self.release = smoothing_coefficient(cfg.release_ms)
        self.envelope = 0.0

    def reset(self) -> None:
        self.envelope = 0.0

    def envelope_db(self, block: np.ndarray) -> np.ndarray:
        """Advance the detector over `block`; returns the per-sample envelope in dBFS."""
        rectified = np.abs(np.asarray(block, dtype=np.float64))
        trace = np.empty_like(rectified)
        envelope = self.envelope
        for index, level in enumerate(rectified):
            coefficient = self.attack if level > envelope else self.release
            envelope += coefficient * (level - envelope)
            trace[index] = envelope
        self.envelope = envelope
        return 20.0 * np.log10(np.maximum(trace, ENVELOPE_FLOOR))

    def gain_db(self, envelope_db: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        reduction = np.minimum(0.0, (cfg.threshold_db - envelope_db) * (1.0 - 1.0 / cfg.ratio))
        return reduction + cfg.makeup_db

    def process(self, block: np.ndarray) -> np.ndarray:
        block = np.asarray(block, dtype=np.float64)
        gains = self.gain_db(self.envelope_db(block))
        return block * 10.0 ** (gains / 20.0)


def compress(signal: SignalBuffer, cfg: DrcConfig = DrcConfig()) -> SignalBuffer:
    compressor = DynamicRangeCompressor(cfg)
    return SignalBuffer(samples=compressor.process(signal.samples), component=signal.component)


def envelope_db(signal: SignalBuffer, cfg: DrcConfig = DrcConfig()) -> np.ndarray:
    return DynamicRangeCompressor(cfg).envelope_db(signal.samples)
