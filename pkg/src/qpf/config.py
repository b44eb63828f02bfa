"""TOML configuration files: one [model] table and one [train] table."""

from __future__ import annotations

import sys
from dataclasses import asdict
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelConfig, TOY_MODEL
from .training import TOY_TRAIN, TrainConfig


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e
    model_raw = data.get("model", {})
    train_raw = data.get("train", {})
    unknown = set(data) - {"model", "train"}
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    try:
        if "prior_filters" in model_raw:
            model_raw["prior_filters"] = tuple(model_raw["prior_filters"])
        model = ModelConfig(**model_raw)
    except TypeError as e:
        raise ConfigError(f"{path}: bad [model] key: {e}") from e
    try:
        train = TrainConfig(**train_raw)
    except TypeError as e:
        raise ConfigError(f"{path}: bad [train] key: {e}") from e
    return model, train


def dump_config(model: ModelConfig, train: TrainConfig) -> str:
    """Render a config back to TOML (inverse of `load_config_file`)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(str(x) for x in v) + "]"
        return repr(v)

    lines = ["[model]"]
    lines += [f"{k} = {fmt(v)}" for k, v in asdict(model).items() if v is not None]
    lines.append("")
    lines.append("[train]")
    lines += [f"{k} = {fmt(v)}" for k, v in asdict(train).items() if v is not None]
    return "\n".join(lines) + "\n"


def toy_profile() -> tuple[ModelConfig, TrainConfig]:
    return TOY_MODEL, TOY_TRAIN
