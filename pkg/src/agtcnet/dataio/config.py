"""Run configuration from an INI file; unknown sections or keys are rejected.

Example::

    [data]
    manifest = raw/manifest.json

    [preprocess]
    t_start = 0.0
    t_end = 3.0
    target_fs = 125

    [split]
    framework = SN
    cv = loso

    [train]
    max_epochs = 1000
    seed = 0

    [model]
    gtc_filters = 96

    [output]
    dir = runs/sn

Relative paths resolve against the config file's directory. The ``[model]``
section accepts any architecture field except the three taken from the data
(channel count, sample count, class count).
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from ..evaluation import FRAMEWORKS
from ..model import ModelConfig
from ..training import TrainConfig


class ConfigError(ValueError):
    pass


_DATA_DERIVED = ("num_channels", "num_samples", "num_classes")
_SCHEMA = {
    "data": {"manifest": str, "montage": str},
    "preprocess": {"t_start": float, "t_end": float, "target_fs": float},
    "split": {"framework": str, "cv": str, "k": int, "seed": int, "runs_as_sessions": bool, "folds": str},
    "train": {"max_epochs": int, "batch_size": int, "lr": float, "loss": str, "early_stop_patience": int,
              "lr_decay": bool, "lr_factor": float, "lr_patience": int, "min_lr": float,
              "min_delta": float, "seed": int, "eval_batch_size": int, "model_seed": int},
    "model": {f.name: (int if f.type == "int" else float) for f in fields(ModelConfig)
              if f.name not in _DATA_DERIVED},
    "output": {"dir": str},
}


@dataclass
class RunConfig:
    text: str  # the file verbatim
    base_dir: str
    manifest: Optional[str] = None
    montage: Optional[str] = None
    t_start: float = 0.0
    t_end: Optional[float] = None
    target_fs: Optional[float] = None
    framework: str = "SN"
    cv: str = "loso"
    k: int = 5
    split_seed: int = 0
    runs_as_sessions: bool = False
    folds: Optional[list] = None  # fold names or indices; None means all
    train: TrainConfig = field(default_factory=TrainConfig)
    model_seed: int = 0
    model: dict = field(default_factory=dict)
    output_dir: Optional[str] = None

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def resolve(self, p: Optional[str]) -> Optional[str]:
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def model_config(self, channels: int, samples: int, classes: int) -> ModelConfig:
        return ModelConfig(num_channels=channels, num_samples=samples, num_classes=classes, **self.model)


def _convert(section, key, raw, kind, parser):
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None
    return raw.strip()


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}") from None
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SCHEMA)}")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {sorted(_SCHEMA[section])}")
            if raw.strip() == "" or raw.strip().lower() == "none":
                continue
            values[(section, key)] = _convert(section, key, raw, _SCHEMA[section][key], parser)

    cfg = RunConfig(text=text, base_dir=base_dir)
    get = values.get
    cfg.manifest = get(("data", "manifest"))
    cfg.montage = get(("data", "montage"))
    cfg.t_start = get(("preprocess", "t_start"), 0.0)
    cfg.t_end = get(("preprocess", "t_end"))
    cfg.target_fs = get(("preprocess", "target_fs"))
    if cfg.t_end is not None and not cfg.t_start < cfg.t_end:
        raise ConfigError(f"[preprocess] t_start {cfg.t_start} must precede t_end {cfg.t_end}")
    if cfg.target_fs is not None and cfg.target_fs <= 0:
        raise ConfigError("[preprocess] target_fs must be positive")
    fw = get(("split", "framework"), "SN").upper()
    if fw not in FRAMEWORKS:
        raise ConfigError(f"[split] framework {fw!r} not one of {FRAMEWORKS}")
    cfg.framework = fw
    cfg.cv = get(("split", "cv"), "loso").lower()
    if cfg.cv not in ("loso", "lmso"):
        raise ConfigError(f"[split] cv must be loso or lmso, got {cfg.cv!r}")
    cfg.k = get(("split", "k"), 5)
    cfg.split_seed = get(("split", "seed"), 0)
    cfg.runs_as_sessions = get(("split", "runs_as_sessions"), False)
    folds = get(("split", "folds"))
    if folds is not None and folds.lower() != "all":
        cfg.folds = [f.strip() for f in folds.split(",") if f.strip()]

    train = {k: v for (s, k), v in values.items() if s == "train" and k != "model_seed"}
    cfg.model_seed = get(("train", "model_seed"), 0)
    if train.get("loss", "cce") not in ("cce", "bce"):
        raise ConfigError(f"[train] loss must be cce or bce, got {train['loss']!r}")
    cfg.train = TrainConfig(**train)
    cfg.model = {k: v for (s, k), v in values.items() if s == "model"}
    try:
        ModelConfig(**cfg.model)
    except ValueError as e:
        raise ConfigError(f"[model] {e}") from None
    cfg.output_dir = get(("output", "dir"))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
