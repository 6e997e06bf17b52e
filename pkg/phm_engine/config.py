import os
from pathlib import Path
from typing import Optional, Type, TypeVar, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from phm_engine.exceptions import ConfigError
from phm_engine.schemas import STFT_PRESETS, DrcConfig, StftConfig, UNetConfig

_M = TypeVar("_M", bound=BaseModel)

load_dotenv()


class Settings:
    def __init__(self):
        self.log_level = os.getenv('PHM_LOG_LEVEL', 'INFO')
        self.precision = os.getenv('PHM_PRECISION', 'float32')
        self.preset = os.getenv('PHM_PRESET', 'rt')
        self.wav_subtype = os.getenv('PHM_WAV_SUBTYPE', 'PCM_16')
        try:
            self.lookahead_ms = float(os.getenv('PHM_LOOKAHEAD_MS', '32'))
            self.reverb_gain_db = float(os.getenv('PHM_REVERB_GAIN_DB', '-15'))
        except ValueError as raised_exception:
            raise ConfigError(f"Invalid numeric setting: {raised_exception}") from raised_exception

        if self.precision not in ('float32', 'float64'):
            raise ConfigError(f"PHM_PRECISION must be float32 or float64, got '{self.precision}'")
        if self.preset not in STFT_PRESETS:
            raise ConfigError(
                f"Unknown preset '{self.preset}'. Supported presets are: {list(STFT_PRESETS.keys())}"
            )
        if self.wav_subtype not in ('PCM_16', 'FLOAT'):
            raise ConfigError(f"PHM_WAV_SUBTYPE must be PCM_16 or FLOAT, got '{self.wav_subtype}'")

    def get_stft_config(self, preset: Optional[str] = None) -> StftConfig:
        name = preset or self.preset
        if name not in STFT_PRESETS:
            raise ConfigError(
                f"Unknown preset '{name}'. Supported presets are: {list(STFT_PRESETS.keys())}"
            )
        return STFT_PRESETS[name]


def load_yaml_model(path: Union[str, Path], model: Type[_M]) -> _M:
    """Validate a YAML document against a pydantic model."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except yaml.YAMLError as raised_exception:
        raise ConfigError(f"{path}: invalid YAML ({raised_exception})") from raised_exception
    try:
        return model.model_validate(document or {})
    except ValidationError as raised_exception:
        raise ConfigError(f"{path}: {raised_exception}") from raised_exception


def load_unet_config(path: Union[str, Path]) -> UNetConfig:
    return load_yaml_model(path, UNetConfig)


def load_drc_config(path: Union[str, Path]) -> DrcConfig:
    return load_yaml_model(path, DrcConfig)


def with_lookahead(cfg: UNetConfig, lookahead_ms: float) -> UNetConfig:
    try:
        return UNetConfig.model_validate({**cfg.model_dump(), "lookahead_ms": lookahead_ms})
    except ValidationError as raised_exception:
        raise ConfigError(f"lookahead {lookahead_ms} ms: {raised_exception}") from raised_exception
