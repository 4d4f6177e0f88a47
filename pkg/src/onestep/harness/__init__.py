"""Experiment runner, persistence and command line interface."""

from .config import PRESETS, load_config, parse_config_text, preset
from .runner import RunRecord, SweepSpec, derive_seed, ge_check, run_single, run_sweep, aggregate

__all__ = ["PRESETS", "load_config", "parse_config_text", "preset", "RunRecord", "SweepSpec",
           "derive_seed", "ge_check", "run_single", "run_sweep", "aggregate"]
