"""Flat key-value run configuration files.

A config file is TOML without tables: every line is ``key = value`` and
every key is a :class:`~ues.trainer.TrainConfig` field. Seeds resolve as
command-line flag, then the ``UES_SEED`` environment variable, then the file.
"""

import os
import sys
from dataclasses import fields

from .trainer import TrainConfig
from .uncertainty import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "UES_SEED"

_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_DEFAULTS = TrainConfig()


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if kind in (bool, "bool"):
        if isinstance(value, bool):
            return value
    elif kind in (int, "int"):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind in (float, "float"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind in (str, "str"):
        if isinstance(value, str):
            return value
    elif kind in (tuple, "tuple"):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return tuple(value)
    expected = getattr(kind, "__name__", kind)
    raise ConfigError(f"{key}: expected {expected}, got {value!r}")


def parse_value(text):
    """Parse one override value with TOML syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def check_keys(values):
    for key in values:
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(values[key], dict):
            raise ConfigError(f"{key}: nested tables are not allowed")


def read_config_file(path):
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    check_keys(values)
    return values


def resolve_seed(file_seed, flag_seed=None, environ=None):
    if flag_seed is not None:
        return flag_seed
    env = (os.environ if environ is None else environ).get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected int, got {env!r}") from None
    return file_seed


def build_config(values, overrides=None, flag_seed=None, environ=None):
    """Merge file values, overrides and the seed into a validated TrainConfig."""
    merged = dict(values)
    merged.update(overrides or {})
    check_keys(merged)
    typed = {k: _coerce(k, v) for k, v in merged.items()}
    typed["seed"] = resolve_seed(typed.get("seed", _DEFAULTS.seed), flag_seed, environ)
    try:
        return TrainConfig(**typed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_blame(typed)}: {exc}") from None


def _blame(typed):
    """Name the first key that is invalid on its own, else all given keys."""
    for key, value in typed.items():
        try:
            TrainConfig(**{key: value})
        except (ValueError, TypeError):
            return key
    return ", ".join(sorted(typed)) or "config"


def load_config(path, overrides=None, flag_seed=None, environ=None):
    values = read_config_file(path) if path else {}
    return build_config(values, overrides, flag_seed, environ)


def dumps_config(cfg):
    """Render a config back into the flat file format."""
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(value, list):
            text = "[" + ", ".join(str(v) for v in value) + "]"
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
