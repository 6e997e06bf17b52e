"""Utterance pipeline: STFT, features, network, masks, decomposition, resynthesis and remix."""

import logging
import time
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from phm_engine.exceptions import ConfigError
from phm_engine.metrics import si_sdr
from phm_engine.opcount import count_ops
from phm_engine.phm import assemble_masks, oracle_fit, quadrangle_decompose, remix
from phm_engine.postproc import compress
from phm_engine.schemas import (
    DrcConfig,
    EnhanceStats,
    GumbelConfig,
    OracleMixtureResult,
    ScenarioRanges,
    StftConfig,
    UNetConfig,
)
from phm_engine.simkit import draw_scenario_params, sample_scenario
from phm_engine.spectral import (
    ComplexSpectrogram,
    SignalBuffer,
    cropped_istft,
    extract_features,
    padded_stft,
    restore_low_bins,
    silence_features,
    trim_low_bins,
)
from phm_engine.streaming import StreamState
from phm_engine.unet import OpCounter, WeightSet, forward_window, split_logits

logger = logging.getLogger(__name__)

Backend = Literal["causal-stream", "noncausal-window"]
LowBand = Literal["direct", "noise"]

ORACLE_BIN_FLOOR = 1e-6


class EnhanceResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    direct: SignalBuffer
    reverb: SignalBuffer
    noise: SignalBuffer
    remix: SignalBuffer
    output: SignalBuffer
    stats: EnhanceStats


def pad_context(features: np.ndarray, cfg: UNetConfig) -> np.ndarray:
    """Surround (T, F, C) utterance features with silence so every frame can be a target."""
    before = silence_features(cfg.target_frame, cfg.freq_bins).frames_last()
    after = silence_features(cfg.lookahead_frames, cfg.freq_bins).frames_last()
    return np.concatenate([before, features, after], axis=0)


def infer_utterance(
    features: np.ndarray,
    weights: WeightSet,
    cfg: UNetConfig,
    mode: Backend = "causal-stream",
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """(T, F, 10) logits, one row per utterance frame."""
    counter = counter if counter is not None else OpCounter()
    padded = pad_context(features, cfg).astype(weights.dtype)
    frames = features.shape[0]
    rows = []
    if mode == "causal-stream":
        state = StreamState(cfg, dtype=weights.dtype)
        for frame in padded:
            logits = state.push(frame, weights)
            if logits is not None:
                rows.append(logits)
        counter.merge(state.op_counter)
    elif mode == "noncausal-window":
        for start in range(frames):
            window = padded[start : start + cfg.context_frames]
            rows.append(forward_window(window, weights, cfg, counter)[cfg.target_frame])
    else:
        raise ConfigError(f"unknown backend '{mode}'")
    logger.debug("%s backend produced %d frames", mode, len(rows))
    return np.stack(rows)


def _route_low_band(
    components: Tuple[ComplexSpectrogram, ComplexSpectrogram, ComplexSpectrogram],
    spec: ComplexSpectrogram,
    discard: int,
    low_band: LowBand,
) -> Tuple[ComplexSpectrogram, ...]:
    restored = [restore_low_bins(component, discard).bins for component in components]
    target = 0 if low_band == "direct" else 2
    restored[target][:, :discard] = spec.bins[:, :discard]
    return tuple(ComplexSpectrogram(bins=bins) for bins in restored)


def enhance(
    signal: SignalBuffer,
    weights: WeightSet,
    cfg: UNetConfig,
    stft_cfg: StftConfig,
    mode: Backend = "causal-stream",
    reverb_gain_db: float = -15.0,
    gumbel: GumbelConfig = GumbelConfig(),
    low_band: LowBand = "direct",
    drc: Optional[DrcConfig] = None,
) -> EnhanceResult:
    if cfg.hop_size != stft_cfg.hop_size or cfg.freq_bins != stft_cfg.bin_count:
        raise ConfigError(
            f"network expects hop {cfg.hop_size} and {cfg.freq_bins} bins, STFT gives "
            f"hop {stft_cfg.hop_size} and {stft_cfg.bin_count} bins"
        )
    weights.check_against(cfg)
    started = time.perf_counter()

    spec = padded_stft(signal, stft_cfg)
    mixture = trim_low_bins(spec, stft_cfg.discard_low_bins)
    features = extract_features(mixture, stft_cfg).frames_last()

    counter = OpCounter()
    logits = infer_utterance(features, weights, cfg, mode, counter)
    logits_d, logits_n = split_logits(logits)
    field_d = assemble_masks(logits_d, gumbel)
    field_n = assemble_masks(logits_n, gumbel.model_copy(update={"seed": gumbel.seed + 1}))
    components = quadrangle_decompose(mixture, field_d, field_n)

    direct, reverb, noise = (
        cropped_istft(component, stft_cfg, len(signal))
        for component in _route_low_band(components, spec, stft_cfg.discard_low_bins, low_band)
    )
    direct, reverb, noise = direct.labelled("direct"), reverb.labelled("reverb"), noise.labelled("noise")
    remixed = remix(direct, reverb, reverb_gain_db)
    output = compress(remixed, drc) if drc is not None else remixed

    elapsed = time.perf_counter() - started
    frames = mixture.frame_count
    stats = EnhanceStats(
        backend=mode,
        frames=frames,
        lookahead_frames=cfg.lookahead_frames,
        instrumented_mults=counter.total(),
        elapsed_s=elapsed,
        ms_per_frame=1000.0 * elapsed / frames,
        ops=count_ops(cfg),
    )
    logger.info(
        "enhanced %d frames with %s backend in %.2f s (%.2f ms/frame)",
        frames,
        mode,
        elapsed,
        stats.ms_per_frame,
    )
    return EnhanceResult(
        direct=direct, reverb=reverb, noise=noise, remix=remixed, output=output, stats=stats
    )


def oracle_scenario(
    seed: int, stft_cfg: StftConfig, ranges: ScenarioRanges = ScenarioRanges()
) -> OracleMixtureResult:
    """Simulate one mixture, rebuild direct and noise from masks fitted to the truth, and score them."""
    params = draw_scenario_params(seed, ranges)
    truth = sample_scenario(seed, ranges)
    n = len(truth.x)
    mixture = padded_stft(truth.x, stft_cfg)
    target_d = padded_stft(truth.y_d, stft_cfg)
    target_n = padded_stft(truth.y_n, stft_cfg)
    field_d = assemble_masks(oracle_fit(mixture, target_d))
    field_n = assemble_masks(oracle_fit(mixture, target_n))
    est_d, _, est_n = quadrangle_decompose(mixture, field_d, field_n)

    magnitude = np.abs(mixture.bins)
    audible = magnitude > ORACLE_BIN_FLOOR
    errors = []
    for est, ref in ((est_d, target_d), (est_n, target_n)):
        # per-bin error on the scale of the larger of mixture and target
        scale = np.maximum(magnitude, np.abs(ref.bins))[audible]
        errors.append(np.max(np.abs(est.bins - ref.bins)[audible] / scale, initial=0.0))
    return OracleMixtureResult(
        seed=seed,
        snr_db=params.snr_db,
        t60=params.t60,
        si_sdr_direct_db=si_sdr(truth.y_d, cropped_istft(est_d, stft_cfg, n)),
        si_sdr_noise_db=si_sdr(truth.y_n, cropped_istft(est_n, stft_cfg, n)),
        max_bin_error=float(max(errors)),
    )
