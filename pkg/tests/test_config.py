from pathlib import Path

import numpy as np
import pytest
import typer
from pydantic import ValidationError

from phm_engine.config import Settings, load_drc_config, load_unet_config, with_lookahead
from phm_engine.exceptions import (
    AudioFormatError,
    ConfigError,
    NoFullSegmentError,
    UsageError,
    WeightFileError,
)
from phm_engine.schemas import STFT_PRESETS, DrcConfig, MetricReport, UNetConfig
from phm_engine.service_results import (
    failed_service_result,
    get_settings,
    handle_result,
    success_service_result,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# ---------------------------------------------------------------------------
# Environment settings
# ---------------------------------------------------------------------------


class TestSettings:
    def test_defaults(self, monkeypatch):
        for name in ("PHM_PRECISION", "PHM_PRESET", "PHM_LOOKAHEAD_MS", "PHM_REVERB_GAIN_DB", "PHM_WAV_SUBTYPE"):
            monkeypatch.delenv(name, raising=False)
        settings = Settings()
        assert settings.precision == "float32"
        assert settings.get_stft_config() == STFT_PRESETS["rt"]
        assert settings.lookahead_ms == 32.0
        assert settings.reverb_gain_db == -15.0
        assert settings.wav_subtype == "PCM_16"

    def test_overrides(self, monkeypatch):
        monkeypatch.setenv("PHM_PRECISION", "float64")
        monkeypatch.setenv("PHM_PRESET", "nrt")
        monkeypatch.setenv("PHM_LOOKAHEAD_MS", "16")
        settings = get_settings()
        assert np.dtype(settings.precision) == np.float64
        assert settings.get_stft_config().hop_size == 256
        assert settings.get_stft_config("rt").hop_size == 128
        assert settings.lookahead_ms == 16.0

    @pytest.mark.parametrize(
        "name, value",
        [
            ("PHM_PRECISION", "float16"),
            ("PHM_PRESET", "wideband"),
            ("PHM_WAV_SUBTYPE", "PCM_24"),
            ("PHM_LOOKAHEAD_MS", "soon"),
            ("PHM_REVERB_GAIN_DB", "quiet"),
        ],
    )
    def test_invalid(self, monkeypatch, name, value):
        monkeypatch.setenv(name, value)
        with pytest.raises(ConfigError):
            Settings()

    def test_unknown_preset_argument(self):
        with pytest.raises(ConfigError, match="Unknown preset"):
            Settings().get_stft_config("wideband")


# ---------------------------------------------------------------------------
# YAML documents
# ---------------------------------------------------------------------------


class TestYamlConfigs:
    @pytest.mark.parametrize("preset", ["rt", "nrt"])
    def test_shipped_networks_match_defaults(self, preset):
        assert load_unet_config(CONFIGS / f"unet_{preset}.yaml") == UNetConfig.default(preset)

    def test_small_network(self):
        cfg = load_unet_config(CONFIGS / "unet_small.yaml")
        assert cfg.depth == 2 and cfg.head_channels == 8

    def test_shipped_compressor(self):
        assert load_drc_config(CONFIGS / "drc_default.yaml") == DrcConfig()

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("encoder_layers: [\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_unet_config(path)

    def test_geometry_rejected(self, tmp_path):
        path = tmp_path / "odd.yaml"
        path.write_text(
            "context_frames: 64\n"
            "encoder_layers:\n"
            "  - {kernel_f: 3, kernel_t: 3, stride_f: 2, stride_t: 2, in_ch: 5, out_ch: 4}\n"
        )
        with pytest.raises(ConfigError, match="tile"):
            load_unet_config(path)

    def test_compressor_ratio_below_one(self, tmp_path):
        path = tmp_path / "drc.yaml"
        path.write_text("ratio: 0.5\n")
        with pytest.raises(ConfigError):
            load_drc_config(path)

    def test_empty_document_uses_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_drc_config(path) == DrcConfig()


class TestLookahead:
    def test_frames_follow_hop(self):
        assert with_lookahead(UNetConfig.default("rt"), 16.0).lookahead_frames == 2
        assert with_lookahead(UNetConfig.default("nrt"), 32.0).lookahead_frames == 2
        assert with_lookahead(UNetConfig.default("rt"), 0.0).target_frame == 64

    def test_longer_than_context(self):
        with pytest.raises(ConfigError, match="lookahead"):
            with_lookahead(UNetConfig.default("rt"), 1000.0)


# ---------------------------------------------------------------------------
# Service results and exit codes
# ---------------------------------------------------------------------------


class TestHandleResult:
    def test_success_is_validated(self):
        report = handle_result(
            success_service_result({"si_sdr_db": 3.0, "phase_distance_deg": 10.0}), MetricReport
        )
        assert report.si_sdr_db == 3.0

    def test_success_without_schema(self):
        assert handle_result(success_service_result("done")).detail == "done"

    @pytest.mark.parametrize(
        "exception, code",
        [
            (UsageError("need --seed"), 2),
            (ConfigError("bad preset"), 2),
            (AudioFormatError("8000 Hz"), 3),
            (WeightFileError("bad magic"), 3),
            (FileNotFoundError("missing.wav"), 3),
            (NoFullSegmentError("too short"), 1),
            (RuntimeError("boom"), 1),
        ],
    )
    def test_exit_codes(self, exception, code):
        with pytest.raises(typer.Exit) as raised:
            handle_result(failed_service_result(exception))
        assert raised.value.exit_code == code

    def test_validation_error_is_usage(self):
        try:
            DrcConfig(ratio=0.0)
        except ValidationError as error:
            with pytest.raises(typer.Exit) as raised:
                handle_result(failed_service_result(error))
        assert raised.value.exit_code == 2

    def test_malformed_success_payload(self):
        with pytest.raises(typer.Exit) as raised:
            handle_result(success_service_result({"si_sdr_db": "loud"}), MetricReport)
        assert raised.value.exit_code == 1
