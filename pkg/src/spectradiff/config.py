"""Flat run configuration: documented defaults plus `key = value` files.

A config file is UTF-8 text, one ``key = value`` per line, ``#`` comments.
Unknown keys are rejected.  Command-line flags override file values, which
override the defaults below.
"""

from __future__ import annotations

from typing import Dict, Union

from .errors import ConfigError, ParseError

Value = Union[int, float, str]

# Every knob of every module, with its documented default.
DEFAULTS: Dict[str, Value] = {
    "seed": 0,
    "threads": 1,
    "data.norm_mode": "minmax",
    # schedule
    "schedule.T": 1000,
    "schedule.s": 0.008,
    "schedule.delta": 1.2,
    "schedule.gamma": 2.0,
    "schedule.clip_max": 0.999,
    "schedule.weight_norm": "mean",
    # denoiser
    "denoiser.patch_size": 8,
    "denoiser.hidden": 64,
    "denoiser.depth": 2,
    "denoiser.heads": 2,
    "denoiser.mlp_ratio": 4,
    # diffusion training
    "train.steps": 3000,
    "train.batch_size": 64,
    "train.lr": 1e-3,
    "train.weight_decay": 1e-4,
    "train.lambda_vlb": 0.001,
    "train.grad_clip": 1.0,
    "train.log_every": 50,
    # augmentation
    "augment.method": "diffusion",
    "augment.per_class": 100,
    "augment.noise_power": 0.03,
    "augment.anchors": 4,
    "augment.k_neighbors": 5,
    # evaluation protocol
    "eval.train_subsample_frac": 0.1,
    "eval.trials": 4,
    "eval.search_epochs": 40,
    "eval.final_epochs": 120,
    "eval.patience": 20,
    "eval.batch_size": 64,
    "eval.lr_min": 1e-4,
    "eval.lr_max": 3e-2,
    "eval.wd_min": 1e-6,
    "eval.wd_max": 1e-2,
    # benchmark generator
    "benchmark.classes": 3,
    "benchmark.per_class": 200,
    "benchmark.bands": 32,
}


def _coerce(key: str, raw: str) -> Value:
    default = DEFAULTS[key]
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r} expects a number, got {raw!r}") from None
    return raw


def load_config(path: str) -> Dict[str, Value]:
    """Parse a key=value file; unknown keys are errors with line numbers."""
    out: Dict[str, Value] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ParseError("expected 'key = value'", line=ln)
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in DEFAULTS:
                raise ParseError(f"unknown config key {key!r}", line=ln)
            out[key] = _coerce(key, raw)
    return out


def merged(file_values: Dict[str, Value] | None = None,
           overrides: Dict[str, Value] | None = None) -> Dict[str, Value]:
    """defaults <- config file <- explicit overrides (e.g. CLI flags)."""
    cfg = dict(DEFAULTS)
    if file_values:
        cfg.update(file_values)
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = val
    return cfg
