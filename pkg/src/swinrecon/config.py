"""Experiment configuration: dataclasses, presets, config files and overrides.

Precedence is CLI override > config file > preset > dataclass defaults.
Overrides are dotted paths such as ``train.gen_config.embed_dim=24``; values
are parsed as YAML scalars/lists.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .adversarial import DiscriminatorConfig
from .losses import VARIANTS, LossWeights
from .swin import GeneratorConfig


class ConfigError(ValueError):
    """Unknown key or invalid value in a configuration."""


@dataclass
class DataConfig:
    n_cases: int = 30
    slices_per_case: int = 20
    size: int = 64
    seed: int = 0
    ratio: tuple[int, int, int] = (6, 1, 3)

    def __post_init__(self):
        self.ratio = tuple(int(r) for r in self.ratio)


@dataclass
class TrainConfig:
    variant: str = "st"
    steps: int = 3000
    batch: int = 4
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    mask_rate: float = 0.3
    center_fraction: float = 0.04
    fixed_mask: bool = False
    grad_clip: float = 1.0
    lr_schedule: str = "constant"
    dtype: str = "float32"
    checkpoint_every: int = 0
    eval_max_images: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    gen_config: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_config: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.steps < 0 or self.batch <= 0:
            raise ConfigError("steps must be >= 0 and batch > 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")
        self.betas = tuple(float(b) for b in self.betas)

    @property
    def has_d1(self) -> bool:
        return self.variant != "swinmr"

    @property
    def d2_operator(self) -> str | None:
        return {"ees": "edge", "tes": "texture"}.get(self.variant)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def to_dict(obj) -> dict:
    """Dataclass tree -> plain JSON-able dict (tuples become lists)."""

    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return conv(obj)


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        ftype = _nested_type(cls, key)
        kwargs[key] = from_dict(ftype, value, f"{path}{key}.") if ftype else value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path.rstrip('.') or 'config'}: {exc}") from exc


_NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (TrainConfig, "weights"): LossWeights,
    (TrainConfig, "gen_config"): GeneratorConfig,
    (TrainConfig, "disc_config"): DiscriminatorConfig,
}


def _nested_type(cls, key):
    return _NESTED.get((cls, key))


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


PRESETS: dict[str, dict] = {
    "desk": {
        "data": {"n_cases": 30, "slices_per_case": 20, "size": 64},
        "train": {
            "steps": 3000,
            "batch": 4,
            "gen_config": {
                "num_rstb": 2,
                "stl_per_rstb": 2,
                "embed_dim": 24,
                "window_size": 8,
                "num_heads": 4,
                "mlp_ratio": 2.0,
                "input_size": [64, 64],
                "zero_init_output": True,
            },
            "disc_config": {"base_channels": 32, "depth": 3},
        },
    },
    "full": {
        "data": {"n_cases": 67, "slices_per_case": 100, "size": 256},
        "train": {
            "steps": 100000,
            "batch": 4,
            "gen_config": {
                "num_rstb": 6,
                "stl_per_rstb": 6,
                "embed_dim": 180,
                "window_size": 8,
                "num_heads": 6,
                "mlp_ratio": 2.0,
                "input_size": [256, 256],
            },
            "disc_config": {"base_channels": 64, "depth": 4},
        },
    },
}


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    return key.split("."), yaml.safe_load(raw) if raw.strip() else ""


def _set_path(tree: dict, path: list[str], value) -> dict:
    out = dict(tree)
    if len(path) == 1:
        out[path[0]] = value
    else:
        out[path[0]] = _set_path(out.get(path[0], {}) or {}, path[1:], value)
    return out


def load_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(
    preset: str | None = "desk", file: str | Path | None = None, overrides=()
) -> ExperimentConfig:
    tree: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        tree = json.loads(json.dumps(PRESETS[preset]))
    if file:
        tree = _merge(tree, load_config_file(file))
    for item in overrides:
        path, value = parse_override(item) if isinstance(item, str) else item
        tree = _set_path(tree, path, value)
    return from_dict(ExperimentConfig, tree)
