"""Run configuration: one YAML file with data / model / train / eval / io sections.

Parsing is strict: unknown keys and wrongly typed values raise ConfigError.
Every default that the method prescribes (loss weights, Adam betas, learning
rate, schedule, batch size) is the value of the corresponding dataclass.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .data import DEFAULT_HU_WINDOW, DegradationSpec
from .losses import LossWeights
from .resample import METHODS
from .training import TrainConfig

GENERATOR_KEYS = {"feature_filters", "recon_filters", "leaky_slope", "dropout_keep"}
DISCRIMINATOR_KEYS = {"conv_filters", "strides", "kernel_size", "fc_units", "leaky_slope"}


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    manifest: Optional[str] = None
    hu_window: tuple = DEFAULT_HU_WINDOW
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    seed: int = 0
    patches_per_slice: int = 16
    hr_patch: int = 64
    upsample_method: str = "nearest"
    lr_format: str = "png"

    def __post_init__(self):
        self.hu_window = tuple(float(v) for v in self.hu_window)
        if len(self.hu_window) != 2 or not self.hu_window[0] < self.hu_window[1]:
            raise ConfigError(f"data.hu_window must be (low, high) with low < high, got {self.hu_window}")
        if self.upsample_method not in METHODS:
            raise ConfigError(f"data.upsample_method must be one of {METHODS}")
        if self.lr_format not in ("png", "raw"):
            raise ConfigError("data.lr_format must be 'png' or 'raw'")
        if self.patches_per_slice < 1 or self.hr_patch < 2 or self.hr_patch % 2:
            raise ConfigError("data.patches_per_slice must be >= 1 and data.hr_patch even")


@dataclass
class ModelSection:
    generator: dict = field(default_factory=dict)
    discriminator: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, allowed, d in (("generator", GENERATOR_KEYS, self.generator),
                                 ("discriminator", DISCRIMINATOR_KEYS, self.discriminator)):
            extra = set(d) - allowed
            if extra:
                raise ConfigError(f"unknown key(s) in model.{name}: {sorted(extra)}")
            for k, v in d.items():
                if isinstance(v, list):
                    d[k] = tuple(v)


@dataclass
class EvalSection:
    methods: tuple = METHODS
    peak: float = 1.0
    baseline_lr_dir: Optional[str] = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown eval method(s) {bad}; expected a subset of {METHODS}")
        if self.peak <= 0:
            raise ConfigError("eval.peak must be positive")


@dataclass
class IOSection:
    out_dir: str = "out"
    log_level: str = "INFO"

    def __post_init__(self):
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"io.log_level {self.log_level!r} is not a logging level")


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IOSection = field(default_factory=IOSection)


def _check_type(path, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
            value = int(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (tuple, list)):
        ok = isinstance(value, (list, tuple))
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__} ({value!r})")
    return value


def _build(cls, raw, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {sorted(extra)}")
    kwargs = {}
    for name, value in raw.items():
        key = f"{path}.{name}" if path else name
        default = getattr(defaults, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _check_type(key, value, default)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def parse_config(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return parse_config(raw or {})


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _plain(cfg)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def with_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    """Apply the --seed override to the data and training seeds."""
    if seed is None:
        return cfg
    cfg = dataclasses.replace(cfg)
    cfg.data = dataclasses.replace(cfg.data, seed=seed, degradation=dataclasses.replace(cfg.data.degradation, seed=seed))
    cfg.train = dataclasses.replace(cfg.train, seed=seed)
    return cfg


__all__ = ["ConfigError", "RunConfig", "LossWeights", "load_config", "parse_config", "dump_config"]
