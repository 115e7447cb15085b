"""Experiment configuration and its YAML file format.

A config file is a flat YAML mapping carrying ``schema_version``; unknown keys
are rejected so a misspelt hyperparameter never falls back to a default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
BACKBONE_SCALES = ("toy", "small", "base", "large")


@dataclass(frozen=True)
class ExperimentConfig:
    resolution: int = 224
    backbone_scale: str = "base"
    layer_picks: tuple[int, ...] = (3, 6, 9, 12)
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 128
    lambda_bce: float = 0.3
    lambda_dice: float = 0.7
    eps_dice: float = 1.0
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    starvation_fractions: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    seed: int = 0
    threshold: float = 0.5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    method: str = field(default="frozen-vit-dpt")

    def __post_init__(self):
        for name in ("layer_picks", "split_ratios", "starvation_fractions", "adam_betas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.backbone_scale not in BACKBONE_SCALES:
            raise ConfigError(f"backbone_scale must be one of {BACKBONE_SCALES}")
        if len(self.layer_picks) != 4:
            raise ConfigError("layer_picks needs exactly 4 layer indices")
        if abs(self.lambda_bce + self.lambda_dice - 1.0) > 1e-9:
            raise ConfigError("lambda_bce + lambda_dice must equal 1")
        if self.eps_dice <= 0:
            raise ConfigError("eps_dice must be positive")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must be three values summing to 1")
        fr = self.starvation_fractions
        if not fr or any(not (0.0 < f <= 1.0) for f in fr):
            raise ConfigError("starvation fractions must lie in (0, 1]")
        if 1.0 not in fr or list(fr) != sorted(fr, reverse=True):
            raise ConfigError("starvation fractions must be sorted descending and include 1.0")
        if self.epochs < 1 or self.batch_size < 1 or self.resolution < 1:
            raise ConfigError("epochs, batch_size and resolution must be positive")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError("threshold must lie in (0, 1)")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be positive")

    @classmethod
    def toy(cls, **overrides) -> "ExperimentConfig":
        """Desk-scale preset: 64x64 inputs, toy backbone, batch 8."""
        base = dict(
            resolution=64, backbone_scale="toy", layer_picks=(2, 4, 6, 8),
            epochs=50, lr=1e-3, batch_size=8,
        )
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def check_schema(data: Mapping[str, Any], cls) -> dict:
    """Pop ``schema_version`` and reject keys that are not fields of ``cls``."""
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    known = {f.name for f in fields(cls)} | {"preset"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def read_mapping(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return data


def config_from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    data = check_schema(data, ExperimentConfig)
    preset = data.pop("preset", None)
    try:
        if preset == "toy":
            return ExperimentConfig.toy(**data)
        if preset not in (None, "full"):
            raise ConfigError(f"unknown preset {preset!r}")
        return ExperimentConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_mapping(read_mapping(path))


def dump_config(cfg: ExperimentConfig) -> str:
    d = {"schema_version": SCHEMA_VERSION, **cfg.to_dict()}
    return yaml.safe_dump(d, sort_keys=True)
