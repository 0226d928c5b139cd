"""Pipeline configuration: defaults, strict TOML loading, and echoing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError
from .features import FeatureConfig
from .graph import CLUSTER_SPACES, GraphConfig
from .model import ModelConfig


@dataclass(frozen=True)
class ClusteringConfig:
    k: int = 32
    max_iter: int = 100
    cluster_space: str = "weighted"
    spatial_weight: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.cluster_space not in CLUSTER_SPACES:
            raise ValueError(f"cluster_space must be one of {CLUSTER_SPACES}")
        if self.spatial_weight < 0:
            raise ValueError("spatial_weight must be non-negative")


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    patience: int = 20  # epochs without validation improvement before stopping; 0 disables

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


SECTIONS = {
    "feature": FeatureConfig,
    "clustering": ClusteringConfig,
    "graph": GraphConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
}
# the sections that shape the graph a cloud turns into
PIPELINE_SECTIONS = ("feature", "clustering", "graph")


@dataclass(frozen=True)
class PipelineConfig:
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
        return out

    def pipeline_dict(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in PIPELINE_SECTIONS}

    def pipeline_hash(self) -> str:
        blob = json.dumps(self.pipeline_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_toml(self) -> str:
        d = self.to_dict()
        # TOML has no null; unset optional values are simply omitted
        clean = {s: {k: v for k, v in sec.items() if v is not None} for s, sec in d.items()}
        return tomli_w.dumps(clean)

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


def _coerce(cls, key, value):
    f = {f.name: f for f in dataclasses.fields(cls)}[key]
    default = f.default if f.default is not dataclasses.MISSING else None
    if value is None and default is None:
        return None  # optional value left unset (JSON null in checkpoint sidecars)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{key} expects a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and "sigma" in key):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{key} expects a list of integers, got {value!r}")
        return tuple(value)
    return value


def from_dict(data: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Overlay ``data`` on ``base`` (defaults when None); unknown keys are errors."""
    base = base or PipelineConfig()
    updates = {}
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        cls = SECTIONS[section]
        names = {f.name for f in dataclasses.fields(cls)}
        current = dataclasses.asdict(getattr(base, section))
        for key, value in values.items():
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            current[key] = _coerce(cls, key, value)
        try:
            updates[section] = cls(**current)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return dataclasses.replace(base, **updates)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults < file < overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            data = tomli.loads(Path(path).read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = from_dict(data, cfg)
    if overrides:
        cfg = from_dict(overrides, cfg)
    return cfg
