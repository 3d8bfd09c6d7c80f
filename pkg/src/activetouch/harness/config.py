"""Experiment configuration loaded from a single YAML file."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..exploration import ServoConfig
from ..likelihood import LikelihoodConfig
from ..particle_filter import FilterConfig
from ..sensing import NoiseConfig


@dataclass(frozen=True)
class PriorsConfig:
    manifest: str | None = None
    n_features: int = 200
    seed: int = 42
    bin_width: float = 0.01


@dataclass(frozen=True)
class WorldConfig:
    max_cycles: int = 15
    search_center: tuple = (0.0, 0.5)
    placement_jitter: float = 0.02
    bootstrap_height: float = 0.35
    bootstrap_jitter: float = 0.01
    target_min_height: float = 0.025
    approach_clearance: float = 0.10
    rolls_deg: tuple = (0.0, 90.0, 180.0, 270.0)
    max_target_attempts: int = 6
    alignment_success: float = 0.73
    contact_force: float = 5.0
    ft_window: int = 10
    ft_force_threshold: float = 2.0
    ft_lambda: float = 1.0
    sweep_step: float = 0.0025
    sweep_margin: float = 0.01
    truth_samples: int = 3000
    add_s_threshold: float = 0.006


@dataclass(frozen=True)
class ExperimentConfig:
    priors: PriorsConfig = field(default_factory=PriorsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    servo: ServoConfig = field(default_factory=ServoConfig)
    world: WorldConfig = field(default_factory=WorldConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(noise={"mislabel_prob": 0.1})``."""
        return from_dict(deep_update(self.to_dict(), sections))


def deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data):
    data = dict(data or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k)
        kwargs[k] = tuple(v) if isinstance(default, tuple) and v is not None else v
    return cls(**kwargs)


SECTIONS = {
    "priors": PriorsConfig,
    "noise": NoiseConfig,
    "likelihood": LikelihoodConfig,
    "filter": FilterConfig,
    "servo": ServoConfig,
    "world": WorldConfig,
}


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return ExperimentConfig(**{k: _build(cls, data.get(k)) for k, cls in SECTIONS.items()})


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    return from_dict(yaml.safe_load(text) or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(json.loads(json.dumps(cfg.to_dict(), default=list)), sort_keys=False)
