"""JSON run configuration: sections world, hyper, field and experiment."""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

from pfac.algorithms import HyperParams
from pfac.environment import FieldConfig, WorldConfig
from pfac.errors import ConfigurationError
from pfac.harness import ExperimentConfig

SECTIONS = ("world", "hyper", "field", "experiment")
_NESTED = {"world", "hyper", "field"}


def _build(cls, section: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigurationError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)} - (_NESTED if cls is ExperimentConfig else set())
    for key in values:
        if key not in known:
            raise ConfigurationError(f"unknown key {section}.{key}")
    return values


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigurationError(f"unknown section {key!r}")
    try:
        world = WorldConfig(**_build(WorldConfig, "world", doc.get("world", {})))
        hyper = HyperParams(**_build(HyperParams, "hyper", doc.get("hyper", {})))
        field = FieldConfig(**_build(FieldConfig, "field", doc.get("field", {})))
        experiment = _build(ExperimentConfig, "experiment", doc.get("experiment", {}))
        return ExperimentConfig(**experiment, world=world, hyper=hyper, field=field)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    experiment = {f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig) if f.name not in _NESTED}
    return {
        "world": asdict(cfg.world),
        "hyper": cfg.hyper.to_dict(),
        "field": asdict(cfg.field),
        "experiment": experiment,
    }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
