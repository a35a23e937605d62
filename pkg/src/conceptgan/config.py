"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type of
the matching :class:`TrainConfig` field; ``seeds`` is a comma-separated list.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .train import TrainConfig


class ConfigError(ValueError):
    pass


_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if key == "seeds":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def read_config(path) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def build_config(values: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: TrainConfig) -> str:
    """Every field written out explicitly, so the file fully reproduces the run."""
    lines = []
    for key, value in config.to_dict().items():
        if key == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
