"""Flat key-value configuration with environment overrides.

Specification:
    A config file holds one `key = value` per line; `#` starts a comment and
    blank lines are skipped. Keys are the field names of the section
    dataclasses below and are unique across sections. Every key can be
    overridden by the environment variable `UA2_<KEY>`. Precedence is
    environment, then file, then defaults.

Classes:
    ModelConfig: Vocabulary and backbone shape.
    CodecConfig: Synthetic features and quantizer settings.
    TrainConfig: Stage recipe, loss weights and optimizer settings.
    GrpoConfig: Rollout and clipped-objective settings.
    FlowConfig: Flow decoder toy settings.
    Config: All sections together.

Functions:
    parse_config_text: Parse config file text into raw key/value strings.
    load_config: Build a Config from an optional file and the environment.
"""
# Imports
from __future__ import annotations
from collections.abc import Mapping
import dataclasses
from dataclasses import dataclass, field
import logging
import os
import pathlib
import typing
from typing import Any, Self

from tokenloom.errors import ConfigError


# Consts
ENV_PREFIX = 'UA2_'
DEFAULT_STREAM_WEIGHTS = (2 / 8, 2 / 8, 2 / 8, 1 / 8, 1 / 8, 1 / 8, 1 / 8, 1 / 8)
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True)
class ModelConfig:
    n_text: int = 64
    n_reason_per_book: int = 64
    n_recon_per_book: int = 64
    n_books: int = 8
    d_model: int = 64
    n_heads: int = 4
    n_understand: int = 2
    n_crossmodal: int = 4
    n_generate: int = 2
    n_local: int = 2
    max_context: int = 256
    rotary_base: float = 10000.0
    init_scale: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class CodecConfig:
    d_feature: int = 16
    interleave: int = 5
    n_compress_blocks: int = 4
    commitment_beta: float = 0.25
    ema_decay: float = 0.99
    codebook_mode: str = 'ema'
    fit_epochs: int = 3
    codec_lr: float = 1e-2
    feature_noise: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe. `steps = 0` and `lr = 0` select the stage defaults."""
    stage: int = 3
    steps: int = 0
    lr: float = 0.0
    warmup: int = 20
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    batch_size: int = 4
    lambda_text: float = 1.6
    lambda_audio: float = 1.0
    lambda_rec: float = 1.0
    stream_weights: tuple[float, ...] = DEFAULT_STREAM_WEIGHTS
    precision: str = 'float32'
    train_seed: int = 0


@dataclass(frozen=True)
class GrpoConfig:
    grpo_groups: int = 20
    group_size: int = 8
    epsilon: float = 0.2
    kl_coef: float = 0.04
    rollout_temperature: float = 1.0
    max_response: int = 128
    grpo_lr: float = 1e-3
    reward_kind: str = 'edit_distance'


@dataclass(frozen=True)
class FlowConfig:
    latent_dim: int = 8
    flow_hidden: int = 64
    n_conditions: int = 2
    cond_dropout_p: float = 0.1
    guidance_scale: float = 1.5
    flow_steps: int = 10
    flow_train_steps: int = 2000
    flow_lr: float = 1e-2
    flow_batch: int = 64


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)

    @classmethod
    def sections(cls) -> dict[str, type]:
        return {f.name: typing.get_type_hints(cls)[f.name] for f in dataclasses.fields(cls)}

    @classmethod
    def keys(cls) -> dict[str, tuple[str, Any]]:
        """Every flat key mapped to its section name and field type."""
        keys: dict[str, tuple[str, Any]] = {}
        for section, section_type in cls.sections().items():
            hints = typing.get_type_hints(section_type)
            for f in dataclasses.fields(section_type):
                keys[f.name] = (section, hints[f.name])
        return keys

    @classmethod
    def from_values(cls, values: Mapping[str, str]) -> Self:
        """Build a config from raw string values keyed by flat key.

        Raises:
            ConfigError: For unknown keys or unparsable values.
        """
        known = cls.keys()
        per_section: dict[str, dict[str, Any]] = {name: {} for name in cls.sections()}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"Unknown configuration key {key!r}.")
            section, kind = known[key]
            per_section[section][key] = _parse_value(key, raw, kind)
        return cls(**{name: section_type(**per_section[name]) for name, section_type in cls.sections().items()})

    def to_dict(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for name in self.sections():
            flat.update(dataclasses.asdict(getattr(self, name)))
        return flat


# Functions
def _parse_value(key: str, raw: str, kind: Any) -> Any:
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('true', '1', 'yes')
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if typing.get_origin(kind) is tuple:
            return tuple(float(part) for part in raw.split(',') if part.strip())
    except ValueError:
        raise ConfigError(f"Cannot parse {raw!r} for key {key!r} as {kind}.")
    raise ConfigError(f"Key {key!r} has an unsupported type {kind}.")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines into a dict of raw strings."""
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got {line!r}.")
        key, value = line.split('=', 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: pathlib.Path | None = None, environ: Mapping[str, str] | None = None) -> Config:
    """Read the config file (if any) and apply `UA2_` environment overrides."""
    environ = os.environ if environ is None else environ
    values = parse_config_text(pathlib.Path(path).read_text()) if path is not None else {}
    for key in Config.keys():
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            _logger.debug(f"Config key {key} overridden by {env_key}.")
            values[key] = environ[env_key]
    return Config.from_values(values)
