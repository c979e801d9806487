"""Experiment configuration: YAML files mapped onto typed settings.

A config file is a nested mapping.  Every section is optional and falls back
to the defaults in :data:`DEFAULTS`; unknown keys are rejected with the full
dotted path so typos do not pass silently.  See ``configs/`` in the
repository for complete examples.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

EXPERIMENTS = ("ntk", "spectral_bias", "ks_dataset", "train_surrogate", "rollout_eval",
               "conditional_mean", "hybrid", "report", "convert")
OUTPUT_ENV = "SPECTRA_GAUNTLET_OUT"
FORMATS = ("csv", "json")

DEFAULTS: dict = {
    "seed": 0,
    "format": "json",
    "ntk": {
        "n": 256,
        "hidden": [128, 128, 128],
        "init_scale": 1.0,
        "max_wavenumber": 32,
        "fit_range": [1, 32],
        "phase": "average",
    },
    "spectral_bias": {
        "n_seeds": 3,
        "lr": 1e-3,
        "steps": 20000,
        "optimizer": "adam",
        "threshold": 0.1,
        "record_stride": 100,
    },
    "ks": {
        "n": 256,
        "length": 64.0,
        "dt": 0.05,
        "snapshot_stride": 5,
        "burn_in_time": 100.0,
        "k_ic": 8,
        "ic_amplitude": 0.6,
        "scheme": "hochbruck-ostermann",
    },
    "dataset": {"n_train": 64, "n_test": 3, "horizon": 100.0},
    "surrogate": {
        "k_max": 32,
        "width": 64,
        "n_layers": 4,
        "lr": 1e-3,
        "steps": 6000,
        "batch_size": 32,
        "residual": True,
    },
    "rollout": {"n_steps": None},
    "lyapunov": {"enabled": True, "perturbation_size": 1e-8, "n_renorm": 1500, "interval": 1.0},
    "conditional_mean": {
        "n": 64,
        "k_c": 8,
        "n_conditions": 8,
        "members_per_condition": 200,
        "kind": "two_pattern",
        "sigma": 0.1,
        "hidden": [64],
        "lr": 1e-3,
        "steps": 3000,
    },
    "hybrid": {
        "K": 10,
        "M": 2,
        "policy": "fixed_period",
        "trigger_metric": "dissipation_band_energy",
        "trigger_factor": 3.0,
        "n_steps": 100,
        "cost_ratio": 1e-3,
        "scale_selective": False,
        "k_split": 32,
        "sweep_K": [5, 10, 20, 40],
        "sweep_M": [1, 2],
        "sweep_ratios": [1e-3, 1e-2, 1e-1],
    },
    "inputs": {"dataset": None, "operator": None, "rollout": None, "hybrid": None,
               "lyapunov": None},
    "convert": {"input": None},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field '{dotted}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config field '{dotted}' must be a mapping")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def _expect(cfg: dict, dotted: str, kind, *, positive=False, allow_none=False):
    *parents, leaf = dotted.split(".")
    holder = cfg
    for part in parents:
        holder = holder[part]
    node = holder[leaf]
    if node is None and allow_none:
        return
    if kind is _NUMBER and isinstance(node, str):
        # YAML 1.1 reads "1e-3" (no dot) as a string
        try:
            node = holder[leaf] = float(node)
        except ValueError:
            pass
    ok = isinstance(node, kind) and not (isinstance(node, bool) and kind is not bool)
    if not ok:
        raise ConfigError(f"config field '{dotted}' must be {getattr(kind, '__name__', kind)}, "
                          f"got {node!r}")
    if positive and not node > 0:
        raise ConfigError(f"config field '{dotted}' must be positive, got {node!r}")


_NUMBER = (int, float)
_CHECKS = [
    ("seed", int, False), ("ntk.n", int, True), ("ntk.init_scale", _NUMBER, True),
    ("ntk.max_wavenumber", int, True), ("spectral_bias.n_seeds", int, True),
    ("spectral_bias.lr", _NUMBER, False), ("spectral_bias.steps", int, False),
    ("spectral_bias.threshold", _NUMBER, True), ("ks.n", int, True), ("ks.length", _NUMBER, True),
    ("ks.dt", _NUMBER, True), ("ks.snapshot_stride", int, True), ("ks.burn_in_time", _NUMBER, False),
    ("dataset.n_train", int, True), ("dataset.n_test", int, True), ("dataset.horizon", _NUMBER, True),
    ("surrogate.k_max", int, True), ("surrogate.width", int, True), ("surrogate.n_layers", int, True),
    ("surrogate.lr", _NUMBER, False), ("surrogate.steps", int, False),
    ("surrogate.batch_size", int, True), ("surrogate.residual", bool, False),
    ("lyapunov.enabled", bool, False), ("lyapunov.n_renorm", int, True),
    ("conditional_mean.k_c", int, True), ("conditional_mean.members_per_condition", int, True),
    ("conditional_mean.steps", int, False), ("hybrid.K", int, True), ("hybrid.M", int, True),
    ("hybrid.n_steps", int, True), ("hybrid.cost_ratio", _NUMBER, True),
    ("hybrid.scale_selective", bool, False),
]


def validate(cfg: dict) -> dict:
    for dotted, kind, positive in _CHECKS:
        _expect(cfg, dotted, kind, positive=positive)
    _expect(cfg, "rollout.n_steps", int, positive=True, allow_none=True)
    if cfg["format"] not in FORMATS:
        raise ConfigError(f"config field 'format' must be one of {FORMATS}, got {cfg['format']!r}")
    if cfg["spectral_bias"]["optimizer"] not in ("gd", "adam"):
        raise ConfigError("config field 'spectral_bias.optimizer' must be 'gd' or 'adam'")
    if cfg["hybrid"]["policy"] not in ("fixed_period", "adaptive"):
        raise ConfigError("config field 'hybrid.policy' must be 'fixed_period' or 'adaptive'")
    if cfg["conditional_mean"]["kind"] not in ("two_pattern", "gaussian"):
        raise ConfigError("config field 'conditional_mean.kind' must be 'two_pattern' or 'gaussian'")
    return cfg


def load_config(path, *, experiment: str | None = None, seed: int | None = None,
                fmt: str | None = None) -> dict:
    """Read a YAML config, merge it over the defaults and validate it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping at the top level")
    named = raw.pop("experiment", None)
    if named is not None and experiment is not None and named != experiment:
        raise ConfigError(f"config field 'experiment' is {named!r} but {experiment!r} was requested")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if fmt is not None:
        cfg["format"] = fmt
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "spectra_gauntlet_runs"))
