"""Run configuration: YAML file, then ``--flag`` / ``--set key=value`` overrides."""

from __future__ import annotations

import dataclasses
import datetime as dt
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .pooling import SplitConfig
from .timeseries_data import MINUTES_PER_WEEK

DATA_DIR_ENV = "TPRNN_DATA_DIR"
DEFAULT_DATA_FILE = "household_power_consumption.txt"


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str = "tprnn"
    layers: int | None = None  # None: 1 for rnn, 2 for drnn/tprnn
    hidden: int = 32
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    clip: float = 5.0
    patience: int = 5
    val_fraction: float = 0.1
    epsilon: float = 0.01
    c: float = 1.0
    svr_epochs: int = 50
    svr_lr: float = 0.01
    svr_batch_size: int = 256
    p: int = 5
    d: int = 1


@dataclass
class RunConfig:
    dataset: str | None = None
    start_date: str | None = None
    n_weeks: int = 4
    n: int = 720
    m: int = 14
    train_fraction: float = 0.67
    w: int = 60
    seed: int = 0
    out: str = "runs/default"
    cache_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self, need_span: bool = False) -> "RunConfig":
        if self.n * self.m != MINUTES_PER_WEEK:
            raise ConfigError(f"n*m must equal {MINUTES_PER_WEEK}, got {self.n}*{self.m}")
        SplitConfig(self.train_fraction, self.seed)
        if not 1 <= self.w < self.n:
            raise ConfigError(f"window w={self.w} must satisfy 1 <= w < n={self.n}")
        if self.n_weeks < 1:
            raise ConfigError("n_weeks must be >= 1")
        if need_span and not self.start_date:
            raise ConfigError("a span start date is required (--start-date YYYY-MM-DD)")
        if self.start_date:
            self.start()
        return self

    def start(self) -> dt.date:
        try:
            return dt.date.fromisoformat(str(self.start_date))
        except ValueError:
            raise ConfigError(f"bad start date {self.start_date!r}; expected YYYY-MM-DD") from None

    def dataset_path(self) -> Path:
        if self.dataset:
            return Path(self.dataset)
        if os.environ.get(DATA_DIR_ENV):
            return Path(os.environ[DATA_DIR_ENV]) / DEFAULT_DATA_FILE
        raise ConfigError(f"no dataset given (--dataset or ${DATA_DIR_ENV})")

    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out) / "cache"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _coerce(value: str, current):
    parsed = yaml.safe_load(value)
    if isinstance(current, float) and isinstance(parsed, int):
        return float(parsed)
    return parsed


def from_dict(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    model_doc = doc.pop("model", None) or {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    unknown |= {f"model.{k}" for k in set(model_doc) - {f.name for f in dataclasses.fields(ModelConfig)}}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if doc.get("start_date") is not None:
        doc["start_date"] = str(doc["start_date"])
    return RunConfig(**doc, model=ModelConfig(**model_doc))


def load_config(path=None, overrides: dict | None = None, sets: list[str] | None = None) -> RunConfig:
    """Defaults, then the YAML file, then ``overrides`` (flag values), then ``key=value`` sets."""
    doc = {}
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    cfg = from_dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            _assign(cfg, key, value)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        target, leaf = _resolve(cfg, key.strip())
        _assign(cfg, key.strip(), _coerce(raw, getattr(target, leaf)))
    return cfg


def _resolve(cfg, key):
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        target = getattr(target, part, None)
        if target is None:
            raise ConfigError(f"unknown config key {key!r}")
    if not hasattr(target, parts[-1]):
        raise ConfigError(f"unknown config key {key!r}")
    return target, parts[-1]


def _assign(cfg, key, value):
    target, leaf = _resolve(cfg, key)
    setattr(target, leaf, value)
