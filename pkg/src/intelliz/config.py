"""JSON run configuration with strict, validate-first loading.

Top-level sections: ``dsp``, ``model``, ``pretrain``, ``train``, ``corpus``.
Every section is optional and falls back to defaults; unknown keys at any
depth are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import DspConfig
from .errors import ConfigError
from .trainer import ModelConfig, TrainConfig
from .tts import PretrainConfig


@dataclass(frozen=True)
class CorpusConfig:
    speakers: int = 4
    sentences: int = 8
    seed: int = 7

    def __post_init__(self):
        if self.speakers < 2 or self.sentences < 2:
            raise ConfigError("corpus: need ≥2 speakers and ≥2 sentences")


@dataclass(frozen=True)
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_scalar(value, tp, where):
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif tp is str:
        ok = isinstance(value, str)
    else:
        return value
    if not ok:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
    return float(value) if tp is float else value


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        sub = f"{where}.{name}"
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, sub)
        elif origin is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub}: expected a list")
            inner = args[0] if args else int
            kwargs[name] = tuple(_check_scalar(v, inner, sub) for v in value)
        elif origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
            real = [a for a in args if a is not type(None)]
            kwargs[name] = None if value is None else _check_scalar(value, real[0], sub)
        else:
            kwargs[name] = _check_scalar(value, tp, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path=None) -> RunConfig:
    """Parse and fully validate a JSON config file (defaults when ``path`` is None)."""
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(data)
