"""Run configuration loaded from YAML; unknown keys are rejected.

Example::

    model: {family: a2a-mel-vs, width: 0.125, identity: none}
    optimizer: {kind: adamw, lr: 1.0e-3, beta1: 0.9, beta2: 0.98, weight_decay: 1.0e-2}
    schedule: {warmup_epochs: 1, eta_max: 1.0e-3, T0: 4, Tmult: 1}   # null = constant lr
    training: {batch_size: 8, max_epochs: 20, patience: 5}
    regime: {preset: grid4-ft-decoder}     # or explicit RegimeConfig fields
    data: {manifest: data/manifest.jsonl}
    seed: 0
    deterministic: true
    threads: 1
    output_dir: runs/pretrain

Sections left out fall back to per-family defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import InvalidArgument, InvalidConfiguration
from .models import ModelConfig
from .training import (OptimizerConfig, RegimeConfig, ScheduleConfig, TrainConfig, default_train_config,
                       regime_preset)

OUTPUT_ROOT_ENV = "V2A_OUTPUT_ROOT"
_TRAINING_KEYS = ("batch_size", "max_epochs", "patience", "max_seconds", "loss_preset", "flip_probability",
                  "grad_clip", "a2a_target_finetune_epochs")


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise InvalidConfiguration(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfiguration(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except InvalidArgument as exc:
        raise InvalidConfiguration(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise InvalidConfiguration(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DataSection:
    manifest: str | None = None
    val_split: str = "val"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    optimizer: OptimizerConfig | None = None
    schedule: ScheduleConfig | None = None
    schedule_given: bool = False
    training: dict = field(default_factory=dict)
    regime: RegimeConfig | None = None
    data: DataSection = DataSection()
    seed: int = 0
    deterministic: bool = True
    threads: int = 1
    output_dir: str | None = None

    def train_config(self, task: str | None = None) -> TrainConfig:
        cfg = default_train_config(self.model, task, seed=self.seed, **self.training)
        if self.optimizer is not None:
            cfg = replace(cfg, optimizer=self.optimizer)
        if self.schedule_given:
            cfg = replace(cfg, schedule=self.schedule)
        return cfg

    def resolved_output_dir(self, command: str) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command

    def to_dict(self) -> dict:
        out = {"model": dataclasses.asdict(self.model)}
        if self.optimizer is not None:
            out["optimizer"] = dataclasses.asdict(self.optimizer)
        if self.schedule_given:
            out["schedule"] = None if self.schedule is None else dataclasses.asdict(self.schedule)
        out["training"] = dict(self.training)
        if self.regime is not None:
            out["regime"] = dataclasses.asdict(self.regime)
        out["data"] = dataclasses.asdict(self.data)
        out.update(seed=self.seed, deterministic=self.deterministic, threads=self.threads,
                   output_dir=self.output_dir)
        return out


TOP_LEVEL = ("model", "optimizer", "schedule", "training", "regime", "data", "seed", "deterministic",
             "threads", "output_dir")


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise InvalidConfiguration("config must be a mapping at top level")
    unknown = sorted(set(raw) - set(TOP_LEVEL))
    if unknown:
        raise InvalidConfiguration(f"unknown top-level keys {unknown}")
    if "model" not in raw:
        raise InvalidConfiguration("config needs a model section")
    model = _build(ModelConfig, raw["model"], "model")
    optimizer = _build(OptimizerConfig, raw["optimizer"], "optimizer") if raw.get("optimizer") else None
    given = "schedule" in raw
    schedule = _build(ScheduleConfig, raw["schedule"], "schedule") if raw.get("schedule") else None
    training = raw.get("training") or {}
    if not isinstance(training, dict):
        raise InvalidConfiguration("training: expected a mapping")
    bad = sorted(set(training) - set(_TRAINING_KEYS))
    if bad:
        raise InvalidConfiguration(f"training: unknown keys {bad}")
    regime = None
    if raw.get("regime"):
        section = dict(raw["regime"])
        preset = section.pop("preset", None)
        if preset is not None:
            base = regime_preset(preset)
            regime = _build(RegimeConfig, {**dataclasses.asdict(base), **section}, "regime")
        else:
            regime = _build(RegimeConfig, section, "regime")
    data = _build(DataSection, raw.get("data"), "data")
    if data.manifest and base_dir is not None and not Path(data.manifest).is_absolute():
        data = replace(data, manifest=str(base_dir / data.manifest))
    cfg = RunConfig(model, optimizer, schedule, given, training, regime, data,
                    int(raw.get("seed", 0)), bool(raw.get("deterministic", True)),
                    int(raw.get("threads", 1)), raw.get("output_dir"))
    try:
        cfg.train_config()
    except TypeError as exc:
        raise InvalidConfiguration(f"training: {exc}") from exc
    if cfg.threads < 1:
        raise InvalidConfiguration("threads must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfiguration(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InvalidConfiguration(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
