"""Run configuration: one YAML or JSON file with a section per component.

Schema (all sections and keys optional; unknown keys are rejected)::

    seed: 0
    noise: "gaussian_iid:sigma=10"
    net:      {channels, grdb_blocks, grdb_layers_per_block, growth, kernel,
               slope, residual, head_init_scale, seed}
    train:    {patch_size, batch_size, lr_init, lr_floor, lr_decay,
               plateau_patience, plateau_threshold, max_steps, eval_every,
               sigma_range, sigma_smoothness, loss_variant, seed}
    prior:    {lam, window, sigma_spatial, sigma_range, range_scale}
    finetune: {lam, patch, lr, iterations, window, loss_variant, seed}
    data:     {train_dir, val_dir, n_train, n_val, size}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .degrade import NoiseSpec
from .finetune import FinetuneConfig
from .net import NetConfig
from .prior import PriorConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train_dir: Optional[str] = None
    val_dir: Optional[str] = None
    n_train: int = 200
    n_val: int = 20
    size: int = 64

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("n_train and n_val must be >= 1")
        if self.size < 8 or self.size % 2:
            raise ValueError("size must be even and >= 8")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    noise: str = "gaussian_iid:sigma=10"
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def noise_spec(self, seed: Optional[int] = None) -> NoiseSpec:
        return NoiseSpec.parse(self.noise, seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"net": NetConfig, "train": TrainConfig, "prior": PriorConfig,
             "finetune": FinetuneConfig, "data": DataConfig}


def _build(cls, values, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in values.items():
        default = getattr(cls(), k) if k in known else None
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    allowed = {"seed", "noise", *_SECTIONS}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"top level: unknown key(s) {', '.join(unknown)}")
    kwargs = {name: _build(cls, raw[name], name) for name, cls in _SECTIONS.items() if name in raw}
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ConfigError("seed: expected an integer")
        kwargs["seed"] = raw["seed"]
    if "noise" in raw:
        kwargs["noise"] = str(raw["noise"])
    cfg = RunConfig(**kwargs)
    try:
        cfg.noise_spec()
    except ValueError as e:
        raise ConfigError(f"noise: {e}") from e
    return cfg


def load_config(path) -> RunConfig:
    """Read a YAML or JSON config file (chosen by suffix, YAML otherwise)."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return config_from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(json.loads(json.dumps(cfg.to_dict())), sort_keys=False)
