"""Plain-text ``key = value`` configuration.

One pair per line, ``#`` comments and blank lines ignored. Keys are written
sorted so the text is canonical. Model keys map onto :class:`ModelConfig`;
anything else is passed through as run options.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .net import ModelConfig

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}


class ConfigError(ValueError):
    pass


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def format_text(pairs: dict) -> str:
    return "".join(f"{k} = {_fmt(pairs[k])}\n" for k in sorted(pairs))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(value: str, like):
    """Convert ``value`` to the type of ``like``."""
    if isinstance(like, bool):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {value!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(x) for x in value.split(",") if x.strip())
    return value


def model_config_from(pairs: dict[str, str]) -> tuple[ModelConfig, dict[str, str]]:
    defaults = ModelConfig()
    kwargs, rest = {}, {}
    for k, v in pairs.items():
        if k in _MODEL_FIELDS:
            try:
                kwargs[k] = coerce(v, getattr(defaults, k))
            except ValueError as exc:
                raise ConfigError(f"{k}: {exc}") from None
        else:
            rest[k] = v
    try:
        return ModelConfig(**kwargs), rest
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_to_text(config: ModelConfig, extra: dict | None = None) -> str:
    pairs = dataclasses.asdict(config)
    for k, v in (extra or {}).items():
        if k in pairs:
            raise ConfigError(f"extra key {k!r} collides with a model field")
        pairs[k] = v
    return format_text(pairs)


def config_from_text(text: str) -> tuple[ModelConfig, dict[str, str]]:
    return model_config_from(parse_text(text))


def load_config(path) -> tuple[ModelConfig, dict[str, str]]:
    return config_from_text(Path(path).read_text(encoding="utf-8"))
