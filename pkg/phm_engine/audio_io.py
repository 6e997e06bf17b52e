import logging
from pathlib import Path
from typing import Union

import numpy as np
import soundfile as sf

from phm_engine.exceptions import AudioFormatError
from phm_engine.schemas import SAMPLE_RATE
from phm_engine.spectral import Component, SignalBuffer

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


def read_wav(path: Union[str, Path], component: Component = "mixture") -> SignalBuffer:
    try:
        info = sf.info(str(path))
    except RuntimeError as raised_exception:
        raise AudioFormatError(f"{path}: unreadable audio file ({raised_exception})") from raised_exception
    if info.samplerate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample rate {info.samplerate} Hz, expected {SAMPLE_RATE}")
    if info.channels != 1:
        raise AudioFormatError(f"{path}: {info.channels} channels, expected mono")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise AudioFormatError(f"{path}: subtype {info.subtype} not supported")
    samples, _ = sf.read(str(path), dtype="float64", always_2d=False)
    return SignalBuffer(samples=samples, component=component)


def write_wav(path: Union[str, Path], signal: SignalBuffer, subtype: str = "PCM_16") -> None:
    if subtype not in SUPPORTED_SUBTYPES:
        raise AudioFormatError(f"subtype {subtype} not supported")
    samples = signal.samples
    over = np.abs(samples) > 1.0
    if subtype == "PCM_16" and np.any(over):
        logger.warning("%s: clipping %d of %d samples", path, int(over.sum()), samples.size)
        samples = np.clip(samples, -1.0, 1.0)
    sf.write(str(path), samples, SAMPLE_RATE, subtype=subtype)
