import numpy as np
import pytest

from phm_engine.schemas import STFT_PRESETS, ConvLayerSpec, UNetConfig
from phm_engine.service_results import get_settings
from phm_engine.spectral import SignalBuffer
from phm_engine.unet import WeightSet, zero_weights

# head bias that drives the direct mask to 1 and the noise mask to 0
PASSTHROUGH_LOGIT = 40.0


def small_config(**overrides) -> UNetConfig:
    """Two layers, one of them strided in time, on the rt geometry."""
    fields = dict(
        encoder_layers=[
            ConvLayerSpec(kernel_f=3, kernel_t=3, stride_f=2, stride_t=2, in_ch=5, out_ch=4),
            ConvLayerSpec(kernel_f=3, kernel_t=3, stride_f=1, stride_t=1, in_ch=4, out_ch=8),
        ],
        head_channels=6,
    )
    fields.update(overrides)
    return UNetConfig(**fields)


def passthrough_weights(cfg: UNetConfig, dtype=np.float64) -> WeightSet:
    tensors = dict(zero_weights(cfg, dtype).tensors)
    bias = np.zeros(10, dtype=dtype)
    bias[0] = PASSTHROUGH_LOGIT  # direct z_k
    bias[6] = PASSTHROUGH_LOGIT  # noise z_notk
    tensors["head.bias"] = bias
    return WeightSet(tensors=tensors, provenance="pass-through")


def random_signal(seed: int, length: int, scale: float = 0.1) -> SignalBuffer:
    return SignalBuffer(samples=scale * np.random.default_rng(seed).standard_normal(length))


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rt():
    return STFT_PRESETS["rt"]


@pytest.fixture
def nrt():
    return STFT_PRESETS["nrt"]


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
