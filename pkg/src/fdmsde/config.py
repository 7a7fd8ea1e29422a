"""Run configuration: one JSON document with sections sde / score / train /
data, every default overridable, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json

from .data_io import DatasetSpec
from .scoring import ScoreConfig
from .sde import NeuralSDEConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


_SECTIONS = {
    "sde": NeuralSDEConfig,
    "score": ScoreConfig,
    "train": TrainConfig,
    "data": DatasetSpec,
}

# train carries nested configs filled from their own sections; data requires
# a path/columns that only matter when a raw series is ingested
_EXCLUDED_FIELDS = {
    "train": {"score", "sde"},
    "data": set(),
}


def _section_fields(section: str) -> dict:
    cls = _SECTIONS[section]
    skip = _EXCLUDED_FIELDS.get(section, set())
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}


def default_config() -> dict:
    """All defaults materialized as a plain dict."""
    out = {}
    for section in _SECTIONS:
        fields = _section_fields(section)
        sec = {}
        for name, f in fields.items():
            if f.default is not dataclasses.MISSING:
                sec[name] = f.default
            elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
                sec[name] = f.default_factory()  # type: ignore[misc]
            else:
                sec[name] = None
        out[section] = sec
    return out


def merge_config(user: dict) -> dict:
    """Overlay a user dict on the defaults, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError(f"config root must be an object, got {type(user).__name__}")
    cfg = default_config()
    for section, content in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r} (expected one of {sorted(cfg)})")
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key, value in content.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key!r}")
            cfg[section][key] = value
    return cfg


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    return merge_config(doc)


def apply_override(cfg: dict, dotted: str):
    """Apply one --set key=value override with a dotted path."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} must look like section.key=value")
    key_path, raw = dotted.split("=", 1)
    parts = key_path.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key_path!r} must be section.key")
    section, key = parts
    if section not in cfg or key not in cfg[section]:
        raise ConfigError(f"unknown config key {key_path!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    cfg[section][key] = value


def build_train_config(cfg: dict) -> TrainConfig:
    try:
        sde = NeuralSDEConfig(**cfg["sde"])
        score = ScoreConfig(**cfg["score"])
        train_kwargs = dict(cfg["train"])
        return TrainConfig(score=score, sde=sde, **train_kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def build_dataset_spec(cfg: dict, path) -> DatasetSpec:
    kwargs = dict(cfg["data"])
    kwargs["path"] = str(path)
    if kwargs.get("feature_columns") is None:
        raise ConfigError("data.feature_columns is required to ingest a raw series CSV")
    try:
        return DatasetSpec(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
