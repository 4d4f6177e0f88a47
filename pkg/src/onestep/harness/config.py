"""Flat key = value configuration files and the shipped presets."""

from __future__ import annotations

import configparser
import dataclasses
import math
from pathlib import Path

from ..model import ExperimentConfig

_SECTION = "experiment"

# the file key "lambda" is the ridge parameter; "lam" is accepted as an alias
_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}

PRESETS: dict[str, dict] = {
    "paper-fig2": dict(n=1000, d=300, N=500, alpha=0.29, eta_scale=1.0, lam=0.01, sigma_eps=math.sqrt(0.5),
                       student="relu_shifted", teacher="hermite_combo", teacher_coeffs=(0.0, 1.0, 1.0), seed=0),
    "paper-fig3-setting1": dict(n=1000, d=300, N=500, alpha=0.2, eta_scale=1.0, lam=0.01, sigma_eps=1.0,
                                student="relu_shifted", teacher="hermite_combo", teacher_coeffs=(0.0, 1.0), seed=0),
    "paper-fig3-setting2": dict(n=1000, d=300, N=500, alpha=0.2, eta_scale=1.0, lam=0.01, sigma_eps=0.0,
                                student="relu_shifted", teacher="hermite_combo",
                                teacher_coeffs=(0.0, 1.0, 1.0 / math.sqrt(2.0)), seed=0),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in ("n", "d", "N", "seed"):
        value = int(raw, 0)
        if key == "seed" and not 0 <= value < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return value
    if key in ("alpha", "eta_scale", "lam", "sigma_eps"):
        return float(raw)
    if key in ("teacher_coeffs", "student_coeffs"):
        if raw.lower() in ("", "none"):
            return None
        return tuple(float(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip())
    return raw


def _canonical_key(key: str) -> str:
    key = _ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}; expected one of {sorted(set(_FIELDS) | set(_ALIASES))}")
    return key


def parse_overrides(pairs) -> dict:
    """Turn ``key=value`` strings into typed field values."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        key = _canonical_key(key.strip())
        out[key] = _coerce(key, raw)
    return out


def parse_config_text(text: str) -> dict:
    """Parse flat config text into a field dict. Unknown keys raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep "N" distinct from "n"
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if parser.sections() != [_SECTION]:
        raise ConfigError("config files are flat; section headers are not allowed")
    values = {}
    for key, raw in parser.items(_SECTION):
        key = _canonical_key(key)
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return values


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dict(PRESETS[name])


def load_config(path: str | Path | None = None, preset_name: str | None = None, overrides=None,
                seed: int | None = None) -> ExperimentConfig:
    """Build a config from preset, then file, then overrides, then seed; later sources win."""
    values = preset(preset_name) if preset_name else {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    if isinstance(overrides, dict):
        values.update(overrides)
    else:
        values.update(parse_overrides(overrides))
    if seed is not None:
        values["seed"] = int(seed)
    missing = [k for k in ("n", "d", "N", "alpha") if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {missing}")
    return ExperimentConfig(**values)


def format_config(config: ExperimentConfig) -> str:
    """Inverse of parse_config_text."""
    lines = []
    for name in _FIELDS:
        value = getattr(config, name)
        key = "lambda" if name == "lam" else name
        if value is None:
            value = "none"
        elif isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    for key in ("teacher_coeffs", "student_coeffs"):
        if out[key] is not None:
            out[key] = list(out[key])
    return out


def config_from_dict(values: dict) -> ExperimentConfig:
    values = dict(values)
    for key in ("teacher_coeffs", "student_coeffs"):
        if values.get(key) is not None:
            values[key] = tuple(values[key])
    return ExperimentConfig(**values)
