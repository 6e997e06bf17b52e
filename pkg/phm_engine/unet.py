"""Valid-convolution U-Net: geometry, weights, batch-norm fusion and the windowed backend.

All feature tensors are (time, frequency, channel). Convolution kernels are
(kernel_t, kernel_f, in_ch, out_ch).
"""

import logging
from collections import Counter
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict

from phm_engine.exceptions import ShapeMismatchError, WeightFileError
from phm_engine.phm import MaskLogits
from phm_engine.schemas import LOGIT_CHANNELS, UNetConfig
from phm_engine.spectral import FeatureStack

logger = logging.getLogger(__name__)

INIT_SCALE = 0.1


class OpCounter:
    """Multiplication tallies per layer name."""

    def __init__(self) -> None:
        self.tallies: Counter = Counter()

    def add(self, layer: str, mults: int) -> None:
        self.tallies[layer] += int(mults)

    def merge(self, other: "OpCounter") -> None:
        self.tallies.update(other.tallies)

    def total(self) -> int:
        return int(sum(self.tallies.values()))

    def as_dict(self) -> Dict[str, int]:
        return {name: int(value) for name, value in self.tallies.items()}


def layer_names(cfg: UNetConfig) -> List[str]:
    names = [f"enc{depth}" for depth in range(1, cfg.depth + 1)]
    names += [f"dec{dec.mirror_of}" for dec in cfg.decoder_layers]
    return names + ["head"]


def dilations(cfg: UNetConfig) -> List[int]:
    """Frame spacing, in input frames, between consecutive outputs of each level (level 0 = input)."""
    spacing = [1]
    for layer in cfg.encoder_layers:
        spacing.append(spacing[-1] * layer.stride_t)
    return spacing


def receptive_offsets(cfg: UNetConfig) -> List[int]:
    """How many input frames each level's newest output lags behind the newest input."""
    spacing = dilations(cfg)
    offsets = [0]
    for depth, layer in enumerate(cfg.encoder_layers, start=1):
        offsets.append(offsets[-1] + (layer.kernel_t - 1) * spacing[depth - 1])
    return offsets


class DecoderPlan(BaseModel):
    """Frames each decoder layer must produce for the single target output frame."""

    target: int
    needed_out: Dict[int, List[int]]
    needed_in: Dict[int, List[int]]
    taps: Dict[int, Dict[int, List[Tuple[int, int]]]]


def plan_decoder(cfg: UNetConfig) -> DecoderPlan:
    shapes = cfg.encoder_shapes()
    needed = [cfg.target_frame]
    needed_out, needed_in, taps = {}, {}, {}
    for depth in range(1, cfg.depth + 1):
        layer = cfg.encoder_layers[depth - 1]
        in_frames = shapes[depth][0]
        layer_taps = {}
        for t in needed:
            layer_taps[t] = [
                ((t - k) // layer.stride_t, k)
                for k in range(layer.kernel_t)
                if (t - k) % layer.stride_t == 0 and 0 <= (t - k) // layer.stride_t < in_frames
            ]
        needed_out[depth] = list(needed)
        taps[depth] = layer_taps
        needed = sorted({i for pairs in layer_taps.values() for i, _ in pairs})
        needed_in[depth] = needed
    return DecoderPlan(target=cfg.target_frame, needed_out=needed_out, needed_in=needed_in, taps=taps)


class BatchNormParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5


def apply_batchnorm(y: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    return (y - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) * bn.gamma + bn.beta


def fuse_batchnorm(
    conv_weights: Tuple[np.ndarray, np.ndarray], bn_params: BatchNormParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Fold an inference batch norm into the preceding convolution (output channels last)."""
    weight, bias = conv_weights
    out_ch = weight.shape[-1]
    for name in ("gamma", "beta", "running_mean", "running_var"):
        if np.shape(getattr(bn_params, name)) != (out_ch,):
            raise ShapeMismatchError(
                f"batch norm {name} has shape {np.shape(getattr(bn_params, name))}, "
                f"convolution has {out_ch} output channels"
            )
    if np.shape(bias) != (out_ch,):
        raise ShapeMismatchError(f"bias has shape {np.shape(bias)}, expected ({out_ch},)")
    scale = bn_params.gamma / np.sqrt(bn_params.running_var + bn_params.eps)
    return weight * scale, (bias - bn_params.running_mean) * scale + bn_params.beta


class WeightSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tensors: Dict[str, np.ndarray]
    provenance: str

    def weight(self, layer: str) -> np.ndarray:
        return self._tensor(f"{layer}.weight")

    def bias(self, layer: str) -> np.ndarray:
        return self._tensor(f"{layer}.bias")

    def _tensor(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError as raised_exception:
            raise WeightFileError(f"weight set has no tensor '{name}'") from raised_exception

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "WeightSet":
        return WeightSet(
            tensors={name: value.astype(dtype) for name, value in self.tensors.items()},
            provenance=self.provenance,
        )

    def check_against(self, cfg: UNetConfig) -> None:
        expected = expected_shapes(cfg)
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise ShapeMismatchError(f"shape mismatch: {missing[0]} (missing)")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(f"shape mismatch: {name}")


def expected_shapes(cfg: UNetConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for depth, layer in enumerate(cfg.encoder_layers, start=1):
        shapes[f"enc{depth}.weight"] = (layer.kernel_t, layer.kernel_f, layer.in_ch, layer.out_ch)
        shapes[f"enc{depth}.bias"] = (layer.out_ch,)
    for dec in cfg.decoder_layers:
        shapes[f"dec{dec.mirror_of}.weight"] = (dec.kernel_t, dec.kernel_f, dec.in_ch, dec.out_ch)
        shapes[f"dec{dec.mirror_of}.bias"] = (dec.out_ch,)
    shapes["head.weight"] = (1, 1, cfg.head_channels, LOGIT_CHANNELS)
    shapes["head.bias"] = (LOGIT_CHANNELS,)
    return shapes


def init_weights(
    cfg: UNetConfig, seed: int, dtype=np.float32, batchnorm: bool = False
) -> WeightSet:
    """Seeded uniform [-0.1, 0.1] weights, optionally with random batch norms folded in."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name in layer_names(cfg):
        weight_shape = expected_shapes(cfg)[f"{name}.weight"]
        weight = rng.uniform(-INIT_SCALE, INIT_SCALE, size=weight_shape)
        bias = rng.uniform(-INIT_SCALE, INIT_SCALE, size=weight_shape[-1])
        if batchnorm and name != "head":
            out_ch = weight_shape[-1]
            bn = BatchNormParams(
                gamma=rng.uniform(0.5, 1.5, out_ch),
                beta=rng.uniform(-INIT_SCALE, INIT_SCALE, out_ch),
                running_mean=rng.uniform(-INIT_SCALE, INIT_SCALE, out_ch),
                running_var=rng.uniform(0.5, 1.5, out_ch),
            )
            weight, bias = fuse_batchnorm((weight, bias), bn)
        tensors[f"{name}.weight"] = weight.astype(dtype)
        tensors[f"{name}.bias"] = bias.astype(dtype)
    provenance = f"seeded-random({seed})"
    logger.debug("initialised %d tensors, %s, batchnorm=%s", len(tensors), provenance, batchnorm)
    return WeightSet(tensors=tensors, provenance=provenance)


def zero_weights(cfg: UNetConfig, dtype=np.float32) -> WeightSet:
    return WeightSet(
        tensors={name: np.zeros(shape, dtype=dtype) for name, shape in expected_shapes(cfg).items()},
        provenance="zeros",
    )


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def conv_valid(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride_t: int, stride_f: int
) -> np.ndarray:
    kernel_t, kernel_f = weight.shape[:2]
    # (T_out, F_out, C_in, kernel_t, kernel_f)
    windows = sliding_window_view(x, (kernel_t, kernel_f), axis=(0, 1))[::stride_t, ::stride_f]
    return np.tensordot(windows, weight, axes=([3, 4, 2], [0, 1, 2])) + bias


def conv_frame(taps: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride_f: int) -> np.ndarray:
    """One output frame from kernel_t input frames stacked as (kernel_t, F, C_in)."""
    kernel_f = weight.shape[1]
    windows = sliding_window_view(taps, kernel_f, axis=1)[:, ::stride_f]
    return np.tensordot(windows, weight, axes=([0, 3, 2], [0, 1, 2])) + bias


def conv_transposed(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride_t: int, stride_f: int
) -> np.ndarray:
    frames, bins, _ = x.shape
    kernel_t, kernel_f, _, out_ch = weight.shape
    contrib = np.tensordot(x, weight, axes=([2], [2]))
    out = np.zeros(
        ((frames - 1) * stride_t + kernel_t, (bins - 1) * stride_f + kernel_f, out_ch),
        dtype=contrib.dtype,
    )
    for i in range(kernel_t):
        for j in range(kernel_f):
            out[i : i + (frames - 1) * stride_t + 1 : stride_t, j : j + (bins - 1) * stride_f + 1 : stride_f] += contrib[:, :, i, j]
    return out + bias


def transposed_row(x_row: np.ndarray, weight_row: np.ndarray, stride_f: int) -> np.ndarray:
    """Contribution of one input frame (F, C_in) through one kernel row (kernel_f, C_in, C_out)."""
    bins = x_row.shape[0]
    kernel_f, _, out_ch = weight_row.shape
    contrib = np.tensordot(x_row, weight_row, axes=([1], [1]))
    out = np.zeros(((bins - 1) * stride_f + kernel_f, out_ch), dtype=contrib.dtype)
    for j in range(kernel_f):
        out[j : j + (bins - 1) * stride_f + 1 : stride_f] += contrib[:, j]
    return out


def head_logits(x: np.ndarray, weights: WeightSet) -> np.ndarray:
    return np.tensordot(x, weights.weight("head")[0, 0], axes=([-1], [0])) + weights.bias("head")


def forward_window(
    features: np.ndarray, weights: WeightSet, cfg: UNetConfig, counter: Optional[OpCounter] = None
) -> np.ndarray:
    """Full pass over a (T, F, C) window; returns pre-activation logits (T, F, 10)."""
    counter = counter if counter is not None else OpCounter()
    h = np.asarray(features, dtype=weights.dtype)
    skips = []
    for depth, layer in enumerate(cfg.encoder_layers, start=1):
        name = f"enc{depth}"
        h = conv_valid(h, weights.weight(name), weights.bias(name), layer.stride_t, layer.stride_f)
        counter.add(name, h.shape[0] * h.shape[1] * layer.kernel_volume * layer.in_ch * layer.out_ch)
        h = leaky_relu(h, cfg.leaky_slope)
        skips.append(h)

    d = skips[-1]
    for dec in cfg.decoder_layers:
        name = f"dec{dec.mirror_of}"
        if dec.mirror_of < cfg.depth:
            d = np.concatenate([d, skips[dec.mirror_of - 1]], axis=-1)
        counter.add(name, d.shape[0] * d.shape[1] * dec.kernel_volume * dec.in_ch * dec.out_ch)
        d = conv_transposed(d, weights.weight(name), weights.bias(name), dec.stride_t, dec.stride_f)
        d = leaky_relu(d, cfg.leaky_slope)

    counter.add("head", d.shape[0] * d.shape[1] * cfg.head_channels * LOGIT_CHANNELS)
    return head_logits(d, weights)


def split_logits(channels: np.ndarray) -> Tuple[MaskLogits, MaskLogits]:
    """(..., 10) head output -> (direct pair, noise pair)."""
    return MaskLogits.from_channels(channels[..., :5]), MaskLogits.from_channels(channels[..., 5:])


def check_window(features: np.ndarray, cfg: UNetConfig) -> None:
    expected = (cfg.context_frames, cfg.freq_bins, cfg.in_channels)
    if features.shape != expected:
        raise ShapeMismatchError(f"shape mismatch: window {features.shape}, expected {expected}")


def naive_infer(
    features: FeatureStack,
    weights: WeightSet,
    cfg: UNetConfig,
    counter: Optional[OpCounter] = None,
) -> Tuple[MaskLogits, MaskLogits]:
    """Logits for frame T-1-LA of one context window, each grid shaped (1, F)."""
    window = features.frames_last()
    check_window(window, cfg)
    logits = forward_window(window, weights, cfg, counter)
    return split_logits(logits[cfg.target_frame][None])
