"""Flat dotted-key run configuration.

The config format is a plain text file of ``section.key = value`` lines
(``#`` comments allowed).  CLI ``--override key=value`` flags replace keys
one-to-one.  The full resolved text is snapshotted into every run
directory and hashed for resume checks.
"""

from __future__ import annotations

from pathlib import Path

from .engine import EngineConfig
from .errors import ConfigurationError
from .stratification import ScheduleConfig

_BOOL = {"true": True, "false": False}


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in _BOOL:
        return _BOOL[text.lower()]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_config_text(text: str) -> dict:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_value(value)
    return values


def apply_overrides(values: dict, overrides: list[str]) -> dict:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r}: expected key=value")
        key, _, value = item.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def render_config_text(values: dict) -> str:
    return "\n".join(f"{k} = {values[k]}" for k in sorted(values)) + "\n"


def load_config(path, overrides: list[str] | None = None) -> dict:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    if overrides:
        values = apply_overrides(values, overrides)
    return values


class ConfigView:
    """Typed access with exact key paths in error messages."""

    def __init__(self, values: dict):
        self.values = dict(values)

    def has(self, key: str) -> bool:
        return key in self.values and self.values[key] != ""

    def get(self, key: str, default=None, required: bool = False):
        if not self.has(key):
            if required:
                raise ConfigurationError(f"missing config key: {key}")
            return default
        return self.values[key]

    def get_int(self, key: str, default=None, required: bool = False) -> int | None:
        value = self.get(key, default, required)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key {key}: expected integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"config key {key}: expected integer, got {value!r}")
        return int(value)

    def get_float(self, key: str, default=None, required: bool = False) -> float | None:
        value = self.get(key, default, required)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key {key}: expected number, got {value!r}")
        return float(value)

    def get_str(self, key: str, default=None, required: bool = False) -> str | None:
        value = self.get(key, default, required)
        return None if value is None else str(value)

    def get_path(self, key: str, required: bool = True) -> Path | None:
        value = self.get_str(key, required=required)
        if value is None:
            return None
        path = Path(value)
        if not path.exists():
            raise ConfigurationError(f"config key {key}: file not found: {path}")
        return path


def schedule_from_config(cfg: ConfigView) -> ScheduleConfig:
    return ScheduleConfig(
        baseline_n=cfg.get_int("schedule.baseline_n", 5000),
        baseline_rate=cfg.get_float("schedule.baseline_rate", 0.15),
        rate_decay=cfg.get_float("schedule.rate_decay", 0.6),
        baseline_strata=cfg.get_int("schedule.baseline_strata", 10),
        strata_growth=cfg.get_float("schedule.strata_growth", 0.5),
        tail_base_fraction=cfg.get_float("schedule.tail_base_fraction", 0.05),
        tail_growth=cfg.get_float("schedule.tail_growth", 0.4),
        audit_base_fraction=cfg.get_float("schedule.audit_base_fraction", 0.05),
        audit_growth=cfg.get_float("schedule.audit_growth", 0.4),
        audit_min=cfg.get_int("schedule.audit_min", 1),
        interp_support=cfg.get_int("schedule.interp_support", 5),
        rate_mode=cfg.get_str("schedule.rate_mode", "piecewise"),
        fixed_rate=cfg.get_float("schedule.fixed_rate", None),
    )


def engine_config_from_config(cfg: ConfigView) -> EngineConfig:
    allocation = cfg.get_str("engine.allocation", "adaptive")
    if allocation not in ("adaptive", "fixed"):
        raise ConfigurationError("engine.allocation must be 'adaptive' or 'fixed'")
    return EngineConfig(
        schedule=schedule_from_config(cfg),
        risk_stabilizer=cfg.get_float("engine.risk_stabilizer", 1e-6),
        weight_distance=cfg.get_float("engine.weight_distance", 1.0),
        weight_mismatch=cfg.get_float("engine.weight_mismatch", 1.0),
        weight_recall=cfg.get_float("engine.weight_recall", 1.0),
        audit_epsilon=cfg.get_float("engine.audit_epsilon", 0.1),
        rare_threshold=cfg.get_float("engine.rare_threshold", 0.05),
        adaptive_allocation=(allocation == "adaptive"),
        selection=cfg.get_str("engine.selection", "uniform"),
    )
