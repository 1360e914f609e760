"""Run configuration: defaults, validation, and the flat key = value format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

AGGREGATION_MODES = ("mean", "median", "max")
PSEUDO_LABEL_MODES = ("hard", "soft")
SELECTION_LOSS_MODES = ("entropy_only", "full_ssl")
ATTRIBUTE_MODES = ("none", "pre_aggregation", "post_aggregation")
TUNE_MODES = ("pce", "pe", "ce")


@dataclass(frozen=True)
class SegTTOConfig:
    temperature: float = 100.0
    mix: float = 0.5
    prompt_count: int = 5
    view_count: int = 64
    retention_fraction: float = 0.2
    entropy_steps: int = 2
    ce_steps: int = 3
    learning_rate: float = 5e-3
    aggregation_mode: str = "mean"
    pseudo_label_mode: str = "hard"
    selection_loss_mode: str = "entropy_only"
    attribute_mode: str = "none"
    tune_mode: str = "pce"
    rng_seed: int = 0


_FIELDS = {f.name: f.type for f in dataclasses.fields(SegTTOConfig)}
_ENUMS = {
    "aggregation_mode": AGGREGATION_MODES,
    "pseudo_label_mode": PSEUDO_LABEL_MODES,
    "selection_loss_mode": SELECTION_LOSS_MODES,
    "attribute_mode": ATTRIBUTE_MODES,
    "tune_mode": TUNE_MODES,
}


def validate_config(cfg: SegTTOConfig) -> SegTTOConfig:
    """Check every field; returns the config unchanged, so it is idempotent."""
    if not cfg.temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {cfg.temperature}")
    if not 0.0 <= cfg.mix <= 1.0:
        raise ConfigError(f"mix must be in [0, 1], got {cfg.mix}")
    if cfg.prompt_count < 1:
        raise ConfigError(f"prompt_count must be >= 1, got {cfg.prompt_count}")
    if cfg.view_count < 1:
        raise ConfigError(f"view_count must be >= 1, got {cfg.view_count}")
    if not 0.0 < cfg.retention_fraction <= 1.0:
        raise ConfigError(
            f"retention_fraction must be in (0, 1], got {cfg.retention_fraction}"
        )
    if cfg.entropy_steps < 0:
        raise ConfigError(f"entropy_steps must be >= 0, got {cfg.entropy_steps}")
    if cfg.ce_steps < 0:
        raise ConfigError(f"ce_steps must be >= 0, got {cfg.ce_steps}")
    if not cfg.learning_rate > 0:
        raise ConfigError(f"learning_rate must be > 0, got {cfg.learning_rate}")
    for name, allowed in _ENUMS.items():
        value = getattr(cfg, name)
        if value not in allowed:
            raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
    if not isinstance(cfg.rng_seed, int):
        raise ConfigError(f"rng_seed must be an integer, got {cfg.rng_seed!r}")
    return cfg


def _coerce(name: str, raw: str):
    kind = _FIELDS[name]
    try:
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> SegTTOConfig:
    """Parse `key = value` lines; unset keys fall back to defaults."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno} is not `key = value`: {raw!r}")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r} on line {lineno}")
        values[key] = _coerce(key, value)
    return validate_config(SegTTOConfig(**values))


def format_config(cfg: SegTTOConfig) -> str:
    """Render in the same flat format parse_config_text accepts."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> SegTTOConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
