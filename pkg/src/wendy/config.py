"""Run configuration: a single JSON document with every tunable and its default."""

from __future__ import annotations

import copy
import json
import re
from pathlib import Path

from .bench import ALL_ESTIMATORS, ExperimentConfig, FSNLSOptions, LMOptions
from .core import WendyError
from .integrate import IntegratorOptions
from .irls import IRLSOptions
from .testfn import TestFunctionOptions

__all__ = ["ConfigError", "DEFAULTS", "default_config", "parse_config_text", "load_config",
           "merge", "to_experiment"]


class ConfigError(WendyError, ValueError):
    code = "config_error"

    def __init__(self, msg, key=None, line=None, source=None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{': '.join([', '.join(where), msg]) if where else msg}")
        self.key = key
        self.line = line


DEFAULTS = {
    "model": "logistic",
    "noise_ratios": [0.1],
    "subsample_factors": [1],
    "n_trials": 20,
    "seed_base": 0,
    "estimators": ["ols", "wendy"],
    "metrics": ["E2", "EFS"],
    "jobs": None,
    "testfn": {"eta": 9.0, "s": 3.0, "stride": 1, "levels": 4, "n_candidates": 50,
               "radius": None},
    "irls": {"alpha": 1e-10, "tau_fp": 1e-6, "tau_sw": 1e-4, "n0": 10, "max_its": 100},
    "integrator": {"rel_tol": 1e-12, "abs_tol": 1e-12, "method": "explicit_rk45",
                   "max_steps": 200_000},
    "fsnls": {"n_starts": 5, "spread": 0.25, "draw": "uniform", "sim_tol": 1e-6, "max_steps": 5_000,
              "lm": {"max_evals": 2000, "max_iter": 500, "min_step": 1e-8, "lambda0": 1e-3}},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _line_of(text: str | None, key: str):
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def merge(base: dict, over: dict, text: str | None = None, source=None, prefix="") -> dict:
    """Overlay ``over`` on ``base``; unknown keys raise ConfigError with their line."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown key; expected one of {sorted(base)}", path,
                              _line_of(text, k), source)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError("expected an object", path, _line_of(text, k), source)
            out[k] = merge(base[k], v, text, source, path + ".")
        else:
            out[k] = v
    return out


def parse_config_text(text: str, source="<config>") -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, source=source) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", source=source)
    cfg = merge(DEFAULTS, doc, text, source)
    _check_types(cfg, text, source)
    return cfg


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(p)) from None
    return parse_config_text(text, str(p))


def _check_types(cfg: dict, text, source):
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(msg, key, _line_of(text, key.split(".")[-1]), source)

    need(isinstance(cfg["model"], str), "model", "expected a string")
    for k in ("noise_ratios", "subsample_factors", "estimators", "metrics"):
        need(isinstance(cfg[k], list) and cfg[k], k, "expected a non-empty list")
    need(all(e in ALL_ESTIMATORS for e in cfg["estimators"]), "estimators",
         f"entries must be in {list(ALL_ESTIMATORS)}")
    need(isinstance(cfg["n_trials"], int) and cfg["n_trials"] >= 1, "n_trials",
         "expected an integer >= 1")
    need(isinstance(cfg["seed_base"], int), "seed_base", "expected an integer")
    need(cfg["jobs"] is None or isinstance(cfg["jobs"], int), "jobs", "expected an integer or null")


def to_experiment(cfg: dict) -> ExperimentConfig:
    """Build the typed experiment config; value errors become ConfigError."""
    try:
        fs = dict(cfg["fsnls"])
        fs["lm"] = LMOptions(**fs["lm"])
        return ExperimentConfig(
            model=cfg["model"],
            noise_ratios=tuple(float(x) for x in cfg["noise_ratios"]),
            subsample_factors=tuple(int(x) for x in cfg["subsample_factors"]),
            n_trials=int(cfg["n_trials"]),
            seed_base=int(cfg["seed_base"]),
            estimators=tuple(cfg["estimators"]),
            metrics=tuple(cfg["metrics"]),
            testfn=TestFunctionOptions(**cfg["testfn"]),
            irls=IRLSOptions(**cfg["irls"]),
            integrator=IntegratorOptions(**cfg["integrator"]),
            fsnls=FSNLSOptions(**fs),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
