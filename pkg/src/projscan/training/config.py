"""Training configuration and the TOML config file.

A config file has up to four tables::

    [data]     dir, channels, split
    [model]    any ModelConfig field
    [train]    any TrainingConfig field
    [augment]  any AugmentParams field
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..model import ModelConfig
from .augment import AugmentParams
from .dataset import DEFAULT_SPLIT


@dataclass
class TrainingConfig:
    lr: float = 0.003
    epochs: int = 400
    batch_size: int = 64
    augment: bool = False
    augment_copies: int = 3
    augment_mode: str = "precomputed"
    patience: int | None = None
    seed: int = 0
    eval_batch_size: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch norm needs two samples)")
        if self.augment_copies < 0:
            raise ConfigError("augment_copies must be >= 0")
        if self.augment_mode not in ("precomputed", "on_the_fly"):
            raise ConfigError("augment_mode must be 'precomputed' or 'on_the_fly'")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DataConfig:
    dir: str = ""
    channels: str = "mean,std"
    split: tuple = DEFAULT_SPLIT


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)


def _build(cls, table: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    return cls(**table)


def parse_config(doc: dict) -> RunConfig:
    unknown = set(doc) - {"data", "model", "train", "augment"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    data = _build(DataConfig, doc.get("data", {}), "data")
    model_table = dict(doc.get("model", {}))
    model_table.setdefault("channels", data.channels)
    return RunConfig(
        data=data,
        model=_build(ModelConfig, model_table, "model"),
        train=_build(TrainingConfig, doc.get("train", {}), "train"),
        augment=_build(AugmentParams, doc.get("augment", {}), "augment"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc)
    if cfg.data.dir and not Path(cfg.data.dir).is_absolute():
        cfg.data.dir = str((path.parent / cfg.data.dir).resolve())
    return cfg
