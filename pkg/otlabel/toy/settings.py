# settings.py
"""
Run configuration for the toy semi-supervised harness
Plain key=value files (dotenv syntax); no environment variables are read
"""

from pathlib import Path
from typing import Any, Optional, Tuple, Type, Union

from dotenv import dotenv_values
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from ..ot_assign.errors import ConfigError

CONFIG_KEYS = (
    "beta",
    "gamma",
    "delta",
    "ema_momentum",
    "lr0",
    "total_iters",
    "poly_power",
    "batch_labeled",
    "batch_unlabeled",
    "cutmix_prob",
    "seed",
    "ot_enabled",
)


class TrainConfig(BaseSettings):
    """Training hyperparameters; defaults follow the standard SSL segmentation recipe."""

    model_config = SettingsConfigDict(extra="forbid", frozen=True, env_file=None)

    beta: float = Field(0.05, gt=0)
    gamma: float = Field(0.95, ge=0, le=1)
    delta: float = Field(0.95, ge=0, le=1)
    ema_momentum: float = Field(0.99, ge=0, lt=1)
    lr0: float = Field(1.0, ge=0)
    total_iters: int = Field(2000, ge=1)
    poly_power: float = Field(0.9, gt=0)
    batch_labeled: int = Field(8, ge=1)
    batch_unlabeled: int = Field(8, ge=0)
    cutmix_prob: float = Field(0.5, ge=0, le=1)
    seed: int = Field(0, ge=0)
    ot_enabled: bool = True

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, dotenv_settings

    def to_lines(self) -> str:
        """Serialize back to the key=value file format."""
        values = self.model_dump()
        lines = []
        for key in CONFIG_KEYS:
            value = values[key]
            lines.append(f"{key}={str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"


def _first_error(exc: ValidationError) -> Tuple[str, Optional[str]]:
    error = exc.errors()[0]
    key = str(error["loc"][0]) if error.get("loc") else None
    return error.get("msg", str(exc)), key


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> TrainConfig:
    """
    Load a run config file; keyword overrides (e.g. seed) take precedence.

    Raises:
        ConfigError: On an unknown key, a missing file or an invalid value
    """
    env_file = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for key in dotenv_values(path):
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key}", key=key)
        env_file = path

    for key in overrides:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}", key=key)

    try:
        return TrainConfig(_env_file=env_file, **overrides)
    except ValidationError as exc:
        message, key = _first_error(exc)
        raise ConfigError(f"invalid value for {key}: {message}", key=key) from exc
