"""Run configuration: nested defaults, file loading and dotted overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any

import yaml

from .data import SynthConfig
from .losses import ALPHA, BETA
from .optim import LR, LR_TEXT


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "model": {
        "d": 32,                      # desk-scale choice; not reported in the published setup
        "text_encoder": "passthrough",  # or "project" (linear + residual LSTM)
        "micro_layers": 2,
        "macro_layers": 1,
        "heads": 4,
        "head_dim": None,             # None -> d / heads
        "ffn_hidden": 64,
        "k": None,                    # None -> 44 if h > 44 else ceil(k_ratio * h); 44 is the published value
        "k_ratio": 0.6,
        "use_cmb": True,
        "ln_eps": 1e-5,
    },
    "loss": {
        "alpha": ALPHA,               # published: 1e-2
        "beta": BETA,                 # published: 1e-3
        "beta_sign": 1,               # -1 turns the diff terms into a disagreement reward
    },
    "optim": {
        "lr": LR,                     # published: 1e-4
        "lr_text": LR_TEXT,           # published: 5e-5 (applied to the text encoder)
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "clip_norm": 1.0,
    },
    "train": {
        "batch_size": 32,
        "epochs": 10,
        "seed": 0,
    },
    "data": {
        "path": None,
        "val_fraction": 0.1,
        "test_fraction": 0.2,
        "split_seed": 0,
    },
    "synth": asdict(SynthConfig()),
    "ablation": {
        "seeds": [0, 1, 2, 3, 4],
        "k_sweep": [2, 4, 8, 16],
        "cells": ["full", "no_diff", "no_oc", "no_cmb", "k_sweep"],
        "workers": 1,
    },
    "gradcheck": {
        "model": {"d": 8, "heads": 2, "ffn_hidden": 16, "text_encoder": "project"},
        "synth": {"n_samples": 2, "len_text": [2, 4], "len_visual": [2, 3], "len_audio": [2, 3],
                  "d_text": 6, "d_visual": 5, "d_audio": 4},
        "max_entries": 12,
        "step": 1e-5,
        "tol": 1e-4,
        "seed": 0,
    },
    "run_dir": "runs/default",
}

# sections whose contents are free-form overrides validated elsewhere
_OPEN_SECTIONS = {("gradcheck", "model"), ("gradcheck", "synth")}


def _coerce(value, default, path: str):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    return value


def _merge(base: dict, update: dict, prefix: tuple[str, ...] = ()) -> None:
    for key, value in update.items():
        path = prefix + (key,)
        dotted = ".".join(path)
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict) and path not in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            _merge(base[key], value, path)
        elif path in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            base[key] = {**base[key], **value}
        else:
            base[key] = _coerce(value, base[key], dotted)


def parse_override(text: str) -> tuple[list[str], Any]:
    """``model.k=16`` -> (['model', 'k'], 16). Values are read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def build_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, doc)
    for item in overrides or []:
        keys, value = parse_override(item)
        nested: Any = value
        for k in reversed(keys):
            nested = {k: nested}
        _merge(cfg, nested)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["loss"]["beta_sign"] not in (1, -1):
        raise ConfigError("loss.beta_sign must be 1 or -1")
    if cfg["train"]["batch_size"] < 1 or cfg["train"]["epochs"] < 1:
        raise ConfigError("train.batch_size and train.epochs must be >= 1")
    if cfg["model"]["k"] is not None and cfg["model"]["k"] < 1:
        raise ConfigError("model.k must be >= 1")
    unknown = set(cfg["gradcheck"]["model"]) - set(DEFAULTS["model"])
    if unknown:
        raise ConfigError(f"unknown gradcheck.model keys {sorted(unknown)}")
    unknown = set(cfg["gradcheck"]["synth"]) - set(DEFAULTS["synth"])
    if unknown:
        raise ConfigError(f"unknown gradcheck.synth keys {sorted(unknown)}")
    unknown = set(cfg["ablation"]["cells"]) - {"full", "no_diff", "no_oc", "no_cmb", "k_sweep"}
    if unknown:
        raise ConfigError(f"unknown ablation cells {sorted(unknown)}")


def effective_beta(cfg: dict) -> float:
    return cfg["loss"]["beta_sign"] * cfg["loss"]["beta"]


def synth_config(section: dict) -> SynthConfig:
    try:
        return SynthConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"synth: {exc}") from exc


def dump_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
