"""Flat ``key = value`` configuration files with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

SEED_ENV = "CHRONOREC_SEED"


@dataclass
class DataConfig:
    period_days: float = 90.0
    period_origin: float = -1.0  # negative means earliest timestamp
    scale: str = "explicit"

    @property
    def period_length(self) -> float:
        return self.period_days * 86400.0

    @property
    def origin(self) -> float | None:
        return None if self.period_origin < 0 else self.period_origin


def read_config(path) -> dict[str, str]:
    """Parse a ``key = value`` file.  ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """``['--alpha', '0.1', '--warm-start', 'false']`` -> ``{'alpha': '0.1', ...}``."""
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"option --{key} needs a value") from None
        out[key] = value
    return out


def _coerce(name: str, kind: Any, raw: str):
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for field {name!r} (expected {kind})") from None


def build(cls, values: dict[str, str], strict: bool = True):
    """Instantiate dataclass ``cls`` from string values, coercing by field type."""
    known = {f.name: f.type for f in fields(cls)}
    if strict:
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config field {unknown[0]!r}")
    kwargs = {k: _coerce(k, known[k], v) for k, v in values.items() if k in known}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def split_known(values: dict[str, str], *classes) -> list[dict[str, str]]:
    """Distribute keys among dataclasses; unknown keys raise ConfigError."""
    parts = [{} for _ in classes]
    for key, value in values.items():
        for part, cls in zip(parts, classes):
            if key in {f.name for f in fields(cls)}:
                part[key] = value
                break
        else:
            raise ConfigError(f"unknown config field {key!r}")
    return parts


def apply_seed_env(values: dict[str, str]) -> dict[str, str]:
    seed = os.environ.get(SEED_ENV)
    if seed is not None and seed.strip():
        values = dict(values)
        values["seed"] = seed.strip()
    return values
