import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import orjson
import pandas as pd

from phm_engine.audio_io import read_wav, write_wav
from phm_engine.config import Settings, load_drc_config, load_unet_config, with_lookahead
from phm_engine.enhance import Backend, LowBand, enhance, oracle_scenario
from phm_engine.exceptions import UsageError
from phm_engine.metrics import metric_report
from phm_engine.opcount import count_layer_mults, count_ops
from phm_engine.schemas import (
    BenchReport,
    DrcConfig,
    ManifestRow,
    OracleCheckReport,
    ScenarioRanges,
    SimulationReport,
    UNetConfig,
)
from phm_engine.service_results import ServiceResult, failed_service_result, success_service_result
from phm_engine.simkit import draw_scenario_params, sample_scenario
from phm_engine.streaming import StreamState
from phm_engine.unet import OpCounter, forward_window, init_weights
from phm_engine.weights_io import load_weights

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
SUBTYPES = {"pcm16": "PCM_16", "float": "FLOAT"}
STEMS = ("mixture", "direct", "reverb", "noise")


def dump_json(path: Union[str, Path], payload) -> None:
    Path(path).write_bytes(orjson.dumps(payload.model_dump(mode="json"), option=JSON_OPTIONS))


class EngineService:
    def __init__(self, app_settings: Settings) -> None:
        self.app_settings = app_settings

    @property
    def dtype(self):
        return np.dtype(self.app_settings.precision)

    def _subtype(self, wav_format: Optional[str]) -> str:
        if wav_format is None:
            return self.app_settings.wav_subtype
        if wav_format not in SUBTYPES:
            raise UsageError(f"unknown wav format '{wav_format}', use pcm16 or float")
        return SUBTYPES[wav_format]

    def network_config(self, config_path: Optional[Path], preset: Optional[str]) -> UNetConfig:
        if config_path is not None:
            return load_unet_config(config_path)
        return UNetConfig.default(preset or self.app_settings.preset)

    def enhance_file(
        self,
        input_path: Path,
        output_path: Path,
        weights_path: Optional[Path] = None,
        seed: Optional[int] = None,
        mode: Backend = "causal-stream",
        preset: Optional[str] = None,
        reverb_gain_db: Optional[float] = None,
        lookahead_ms: Optional[float] = None,
        drc: bool = False,
        drc_config_path: Optional[Path] = None,
        config_path: Optional[Path] = None,
        emit_components: Optional[Path] = None,
        emit_stats: Optional[Path] = None,
        wav_format: Optional[str] = None,
        low_band: LowBand = "direct",
    ) -> ServiceResult:
        try:
            if weights_path is None and seed is None:
                raise UsageError("either --weights or --seed is required")
            subtype = self._subtype(wav_format)
            stft_cfg = self.app_settings.get_stft_config(preset)
            cfg = with_lookahead(
                self.network_config(config_path, preset or self.app_settings.preset),
                self.app_settings.lookahead_ms if lookahead_ms is None else lookahead_ms,
            )
            if weights_path is not None:
                weights = load_weights(weights_path, cfg).astype(self.dtype)
            else:
                weights = init_weights(cfg, seed, dtype=self.dtype, batchnorm=True)
            drc_cfg = None
            if drc:
                drc_cfg = load_drc_config(drc_config_path) if drc_config_path else DrcConfig()

            result = enhance(
                read_wav(input_path),
                weights,
                cfg,
                stft_cfg,
                mode=mode,
                reverb_gain_db=(
                    self.app_settings.reverb_gain_db if reverb_gain_db is None else reverb_gain_db
                ),
                low_band=low_band,
                drc=drc_cfg,
            )
            write_wav(output_path, result.output, subtype)
            if emit_components is not None:
                emit_components.mkdir(parents=True, exist_ok=True)
                for component in (result.direct, result.reverb, result.noise):
                    write_wav(emit_components / f"{component.component}.wav", component, subtype)
            if emit_stats is not None:
                dump_json(emit_stats, result.stats)
            logger.info("wrote %s (weights: %s)", output_path, weights.provenance)
            return success_service_result(result.stats)
        except Exception as raised_exception:
            return failed_service_result(raised_exception)

    def simulate(
        self,
        seed: int,
        out_dir: Path,
        count: int = 1,
        snr_db: Optional[float] = None,
        snr_range: Optional[Tuple[float, float]] = None,
        t60: Optional[float] = None,
        wav_format: Optional[str] = None,
    ) -> ServiceResult:
        try:
            if count < 0:
                raise UsageError("--count must be non-negative")
            if snr_db is not None and snr_range is not None:
                raise UsageError("give either --snr-db or --snr-range, not both")
            subtype = self._subtype(wav_format)
            overrides = {}
            if snr_db is not None:
                overrides["snr_db"] = (snr_db, snr_db)
            elif snr_range is not None:
                overrides["snr_db"] = snr_range
            if t60 is not None:
                overrides["t60"] = (t60, t60)
            ranges = ScenarioRanges(**overrides)

            out_dir.mkdir(parents=True, exist_ok=True)
            rows = []
            for index in range(count):
                scenario_seed = seed + index
                truth = sample_scenario(scenario_seed, ranges)
                names = {stem: f"{index:04d}_{stem}.wav" for stem in STEMS}
                for stem, signal in zip(STEMS, (truth.x, truth.y_d, truth.y_r, truth.y_n)):
                    write_wav(out_dir / names[stem], signal, subtype)
                rows.append(
                    ManifestRow(
                        index=index,
                        seed=scenario_seed,
                        snr_db=truth.snr_db,
                        measured_snr_db=truth.measured_snr_db(),
                        t60=draw_scenario_params(scenario_seed, ranges).t60,
                        **names,
                    )
                )
            manifest = out_dir / "manifest.csv"
            frame = pd.DataFrame(
                [row.model_dump() for row in rows], columns=list(ManifestRow.model_fields)
            )
            frame.to_csv(manifest, index=False)
            logger.info("simulated %d mixtures into %s", count, out_dir)
            return success_service_result(
                SimulationReport(count=count, out_dir=str(out_dir), manifest=str(manifest), rows=rows)
            )
        except Exception as raised_exception:
            return failed_service_result(raised_exception)

    def metrics(
        self,
        reference_path: Path,
        estimate_path: Path,
        preset: Optional[str] = None,
        mixture_path: Optional[Path] = None,
    ) -> ServiceResult:
        try:
            report = metric_report(
                read_wav(reference_path, "direct"),
                read_wav(estimate_path, "estimate"),
                self.app_settings.get_stft_config(preset),
                mixture=read_wav(mixture_path) if mixture_path is not None else None,
                names=(str(reference_path), str(estimate_path)),
            )
            return success_service_result(report)
        except Exception as raised_exception:
            return failed_service_result(raised_exception)

    def bench_ops(
        self, config_path: Optional[Path] = None, instrumented: bool = True, seed: int = 0
    ) -> ServiceResult:
        try:
            cfg = self.network_config(config_path, None)
            analytic = count_ops(cfg)
            naive_counts, streaming_counts = {}, {}
            if instrumented:
                naive_counts, streaming_counts = measure_ops(cfg, seed, self.dtype)
            matches = (
                naive_counts == count_layer_mults(cfg, "naive")
                and streaming_counts == count_layer_mults(cfg, "streaming")
            )
            return success_service_result(
                BenchReport(
                    analytic=analytic,
                    instrumented_naive=naive_counts,
                    instrumented_streaming=streaming_counts,
                    counts_match=matches if instrumented else False,
                )
            )
        except Exception as raised_exception:
            return failed_service_result(raised_exception)

    def oracle_check(
        self, seed: int, count: int, threshold_db: float = 50.0, preset: Optional[str] = None
    ) -> ServiceResult:
        try:
            if count < 0:
                raise UsageError("--count must be non-negative")
            stft_cfg = self.app_settings.get_stft_config(preset)
            mixtures = []
            for index in range(count):
                mixtures.append(oracle_scenario(seed + index, stft_cfg))
                logger.debug("oracle mixture %d: %s", index, mixtures[-1])
            report = OracleCheckReport(count=count, seed=seed, threshold_db=threshold_db, mixtures=mixtures)
            if mixtures:
                report = report.model_copy(
                    update={
                        "min_si_sdr_direct_db": min(m.si_sdr_direct_db for m in mixtures),
                        "min_si_sdr_noise_db": min(m.si_sdr_noise_db for m in mixtures),
                        "max_bin_error": max(m.max_bin_error for m in mixtures),
                        "passed": all(
                            min(m.si_sdr_direct_db, m.si_sdr_noise_db) >= threshold_db for m in mixtures
                        ),
                    }
                )
            return success_service_result(report)
        except Exception as raised_exception:
            return failed_service_result(raised_exception)


def measure_ops(cfg: UNetConfig, seed: int, dtype=np.float32):
    """Per-layer tallies of one windowed pass and of one steady-state streaming push."""
    weights = init_weights(cfg, seed, dtype=dtype)
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((cfg.context_frames + 1, cfg.freq_bins, cfg.in_channels))
    naive = OpCounter()
    forward_window(frames[: cfg.context_frames], weights, cfg, naive)
    state = StreamState(cfg, dtype=dtype)
    for frame in frames:
        state.push(frame, weights)
    return naive.as_dict(), state.last_push_ops.as_dict()
