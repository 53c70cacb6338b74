"""Configuration files: TOML (or JSON) with ``[device]``, ``[pulse]``, ``[sweep]`` and ``[calibration]`` tables.

Keys mirror the field names of the dataclass each table feeds.
"""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

from .experiments import ConfigError


def load_config(path) -> dict:
    """Parse a TOML or JSON file into nested dictionaries."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = _toml.loads(text)
    except (ValueError, _toml.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    return data


def section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def build(cls, values: dict, extra: tuple[str, ...] = ()):
    """Instantiate dataclass ``cls`` from ``values``; unknown keys are errors.

    Keys listed in ``extra`` are accepted and dropped.
    """
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names - set(extra)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw = {k: v for k, v in values.items() if k in names}
    for k, v in kw.items():
        if isinstance(v, list):
            kw[k] = tuple(v)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc
