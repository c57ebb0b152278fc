"""Experiment configuration: YAML in, validated dataclasses out, and back."""
from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from typing import Any

import yaml

from .data import SyntheticSpec
from .distill.losses import DistillPlan
from .errors import ConfigError
from .model import AdapterSpec, ViTConfig


@dataclass(frozen=True)
class NetConfig:
    model: ViTConfig = field(default_factory=ViTConfig)
    adapter: AdapterSpec = field(default_factory=AdapterSpec)


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 5e-3
    warmup_epochs: int = 10
    warmup_lr: float = 1e-7
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class PretextConfig:
    """Backbone warm-up on a disjoint synthetic split before freezing."""

    epochs: int = 5
    lr: float = 1e-3
    warmup_epochs: int = 1
    student_checkpoint: str | None = None
    teacher_checkpoint: str | None = None


@dataclass(frozen=True)
class DataConfig:
    train_path: str | None = None
    test_path: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    test_samples_per_class: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    epochs: int = 100
    batch_size: int = 32
    out_dir: str | None = None
    student: NetConfig = field(default_factory=NetConfig)
    teacher: NetConfig | None = None
    plan: DistillPlan = field(default_factory=lambda: DistillPlan(loss_kind="none"))
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    allow_forward_distill: bool = False
    with_baseline: bool = False


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def _coerce(tp, value, path: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: a value is required")
    if dataclasses.is_dataclass(tp):
        return build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if typing.get_origin(tp) is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{path}: expected a list of {len(args)} values, got {value!r}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    raise ConfigError(f"{path}: unsupported field type {tp}")


def build(cls, data: Any, path: str = "config"):
    """Instantiate dataclass ``cls`` from nested mappings, naming the failing field."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def validate(cfg: ExperimentConfig, check_paths: bool = True) -> ExperimentConfig:
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError("config.epochs and config.batch_size must be >= 1")
    if cfg.teacher is None and cfg.plan.loss_kind != "none":
        raise ConfigError(f"config.plan.loss_kind: {cfg.plan.loss_kind!r} needs a teacher (use 'none')")
    if cfg.teacher is not None:
        s, t = cfg.student.model, cfg.teacher.model
        if (s.image_size, s.channels) != (t.image_size, t.channels):
            raise ConfigError("config.teacher.model: image_size/channels must match the student")
        if t.width > s.width and not cfg.allow_forward_distill:
            raise ConfigError(
                f"config.teacher.model.width: {t.width} > student width {s.width}; "
                "set allow_forward_distill: true for larger teachers"
            )
    for net, where in ((cfg.student, "student"), (cfg.teacher, "teacher")):
        if net is not None and net.adapter.hidden_dim >= net.model.width:
            raise ConfigError(f"config.{where}.adapter.hidden_dim must be smaller than the model width")
    d = cfg.data
    if d.train_path is None and d.synthetic is None:
        raise ConfigError("config.data: give train_path or a synthetic spec")
    if (d.train_path is None) != (d.test_path is None):
        raise ConfigError("config.data: train_path and test_path go together")
    if d.synthetic is not None and d.train_path is None:
        m = cfg.student.model
        if (d.synthetic.image_size, d.synthetic.channels) != (m.image_size, m.channels):
            raise ConfigError("config.data.synthetic: image_size/channels must match the model")
    if check_paths:
        for path, where in (
            (d.train_path, "data.train_path"),
            (d.test_path, "data.test_path"),
            (cfg.pretext.student_checkpoint, "pretext.student_checkpoint"),
            (cfg.pretext.teacher_checkpoint, "pretext.teacher_checkpoint"),
        ):
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"config.{where}: {path} does not exist")
    return cfg


def from_dict(data: dict, check_paths: bool = True) -> ExperimentConfig:
    return validate(build(ExperimentConfig, data or {}), check_paths)


def load(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from None
    return from_dict(data)


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a mapping")
        node[parts[-1]] = yaml.safe_load(raw)
    return data
