"""Flat key-value configuration files with section prefixes.

Format (see docs/config.md): one `section.key = value` per line, `#`
comments, blank lines ignored.  Sections: `sim.*` for the Monte-Carlo
campaign, `run.*` for campaign execution, `utias.*` for dataset replay.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .simulate import SimConfig
from .utias import ReplayConfig

_SIM_KEYS = {f.name for f in fields(SimConfig)}
_REPLAY_KEYS = {f.name for f in fields(ReplayConfig)}
_RUN_KEYS = {"n_runs", "base_seed", "filters"}


def parse_config(path) -> dict:
    """Parse a config file into {section: {key: raw string}}."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    out: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{path}:{lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = value
    return out


def _convert(raw: str, target_type):
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if target_type is int:
        return int(raw)
    return float(raw)


def build_sim_config(sections: dict, overrides: dict | None = None) -> SimConfig:
    """SimConfig from the `sim.` and `run.` sections plus CLI overrides."""
    kwargs = {}
    sim = dict(sections.get("sim", {}))
    run = dict(sections.get("run", {}))
    for name, raw in sim.items():
        if name not in _SIM_KEYS:
            raise ConfigError(f"unknown sim key {name!r}")
        field_type = SimConfig.__dataclass_fields__[name].type
        try:
            kwargs[name] = _convert(raw, int if "int" in str(field_type) else float)
        except ValueError as exc:
            raise ConfigError(f"sim.{name}: {exc}") from None
    for name, raw in run.items():
        if name not in _RUN_KEYS:
            raise ConfigError(f"unknown run key {name!r}")
        if name == "filters":
            continue  # consumed by the CLI layer
        try:
            kwargs[name] = int(raw)
        except ValueError as exc:
            raise ConfigError(f"run.{name}: {exc}") from None
    if overrides:
        kwargs.update(overrides)
    try:
        return SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_replay_config(sections: dict, overrides: dict | None = None) -> ReplayConfig:
    """ReplayConfig from the `utias.` section plus CLI overrides."""
    kwargs = {}
    for name, raw in sections.get("utias", {}).items():
        if name not in _REPLAY_KEYS:
            raise ConfigError(f"unknown utias key {name!r}")
        if name in ("robots", "time_window"):
            try:
                parts = tuple(float(p) if name == "time_window" else int(p)
                              for p in raw.split(","))
            except ValueError as exc:
                raise ConfigError(f"utias.{name}: {exc}") from None
            kwargs[name] = parts
            continue
        if name == "bearing_std" and raw.endswith("deg"):
            kwargs[name] = math.radians(float(raw[:-3]))
            continue
        field_type = ReplayConfig.__dataclass_fields__[name].type
        try:
            kwargs[name] = _convert(raw, bool if "bool" in str(field_type) else float)
        except ValueError as exc:
            raise ConfigError(f"utias.{name}: {exc}") from None
    if overrides:
        kwargs.update(overrides)
    try:
        return ReplayConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def configured_filters(sections: dict) -> tuple | None:
    raw = sections.get("run", {}).get("filters")
    if raw is None:
        return None
    return tuple(part.strip() for part in raw.split(",") if part.strip())
