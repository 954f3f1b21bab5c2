"""Experiment configuration: strict JSON loading and a canonical hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .safety import DEFAULT_BINS, DEFAULT_GRID


class ConfigError(ValueError):
    pass


@dataclass
class DomainSettings:
    noise_std: float = 0.01
    scale_range: list = field(default_factory=lambda: [0.9, 1.1])
    phase_jitter: float = 0.3
    azimuth_range: list = field(default_factory=lambda: [0.0, 0.0])
    elevation_range: list = field(default_factory=lambda: [0.0, 0.0])


def _shifted() -> DomainSettings:
    return DomainSettings(noise_std=0.05, scale_range=[0.7, 1.3], azimuth_range=[-45.0, 45.0],
                          elevation_range=[-15.0, 15.0])


@dataclass
class Sizes:
    source_train: int = 320
    source_val: int = 80
    source_test: int = 240
    style_shift: int = 800
    semantic_shift: int = 240


@dataclass
class DataSettings:
    n_classes: int = 8
    frames: int = 8
    source: DomainSettings = field(default_factory=DomainSettings)
    style_shift: DomainSettings = field(default_factory=_shifted)
    semantic_shift: DomainSettings = field(default_factory=_shifted)
    sizes: Sizes = field(default_factory=Sizes)


@dataclass
class ModelSettings:
    d_joint: int = 16
    d_model: int = 32
    layers: int = 2
    heads: int = 2
    mlp_ratio: int = 2
    dropout: float = 0.1


@dataclass
class TrainSettings:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-4


@dataclass
class AdaptSettings:
    target: str = "style_shift"
    n_labeled: int = 500
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    val_fraction: float = 0.1
    seeds: int = 3


@dataclass
class UQSettings:
    mc_passes: int = 20
    ablation_passes: list = field(default_factory=lambda: [5, 10, 20, 30])
    ensemble_k: int = 3
    energy_T: float = 1.0
    shrinkage: float = 1e-3
    post_gate_features: bool = False


@dataclass
class MetricSettings:
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    bins: int = DEFAULT_BINS


@dataclass
class CorruptionSettings:
    sigmas: list = field(default_factory=lambda: [0.0, 0.01, 0.05, 0.10])
    drops: list = field(default_factory=lambda: [0, 1, 3, 5])


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    adapt: AdaptSettings = field(default_factory=AdaptSettings)
    uq: UQSettings = field(default_factory=UQSettings)
    metrics: MetricSettings = field(default_factory=MetricSettings)
    corruption: CorruptionSettings = field(default_factory=CorruptionSettings)

    def validate(self) -> "ExperimentConfig":
        if self.adapt.target not in ("style_shift", "semantic_shift"):
            raise ConfigError("adapt.target must be style_shift or semantic_shift")
        target_n = getattr(self.data.sizes, self.adapt.target)
        if not 0 < self.adapt.n_labeled < target_n:
            raise ConfigError("adapt.n_labeled must be positive and smaller than the target bundle")
        if self.uq.ensemble_k < 2:
            raise ConfigError("uq.ensemble_k must be >= 2")
        if self.model.d_model % self.model.heads:
            raise ConfigError("model.d_model must be divisible by model.heads")
        if any(s < 0 for s in self.corruption.sigmas):
            raise ConfigError("corruption sigmas must be non-negative")
        if any(not 0 <= k <= 25 for k in self.corruption.drops):
            raise ConfigError("corruption drops must lie in [0, 25]")
        if not self.uq.shrinkage > 0 or not self.uq.energy_T > 0:
            raise ConfigError("uq.shrinkage and uq.energy_T must be positive")
        if not self.uq.ablation_passes or min(self.uq.ablation_passes) < 1:
            raise ConfigError("uq.ablation_passes must be positive")
        g = self.metrics.grid
        if any(b <= a for a, b in zip(g, g[1:])) or not 0 < g[0] or g[-1] > 1:
            raise ConfigError("metrics.grid must be strictly increasing within (0, 1]")
        if 0.5 not in g or 1.0 not in g:
            raise ConfigError("metrics.grid must contain 0.5 and 1.0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_bytes(self) -> bytes:
        """Sorted-key compact JSON of everything except the output location."""
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        elif hint is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[name] = float(value)
        elif hint in (int, bool, str) and type(value) is not hint:
            raise ConfigError(f"{path} must be of type {hint.__name__}")
        elif hint is list and not isinstance(value, list):
            raise ConfigError(f"{path} must be a list")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
