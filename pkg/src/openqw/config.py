"""Run configuration: YAML file + environment + command-line flags, schema-checked."""
from __future__ import annotations

import copy
import os

import numpy as np
import yaml

from .errors import InvalidArgumentError

ENV_PREFIX = "OPENQW_"
MODES = ("phase-diagram", "quench-unitary", "quench-ensemble", "quench-lindblad", "scaling", "tomography-roundtrip")


class ConfigError(InvalidArgumentError):
    pass


DEFAULTS = {
    "mode": None,
    "grid": 256,
    "seed": 0,
    "out": "out",
    "threads": 1,
    "theta_i": [0.0, float(np.pi)],
    "theta_f": [3.4, -2.25],
    "steps": 13,
    "dump_density": False,
    "disorder": {
        "delta_theta1": 0.2,
        "n_realizations": 21,
        "sampling": "uniform-grid",
        "resample_per_step": False,
    },
    "noise": {
        # a number, a per-node list, or "calibrated" (fit to the disorder ensemble)
        "gamma": "calibrated",
        "calibration": "per-step",
    },
    "phase_diagram": {
        "resolution": 64,
        "theta1_range": [-float(np.pi), float(np.pi)],
        "theta2_range": [-float(np.pi), float(np.pi)],
        "boundary_grid": 512,
        "gap_threshold": 1e-3,
    },
    "scaling": {"steps": [8, 16, 32, 64]},
    "tomography": {
        "steps": 5,
        "state": "ensemble",
        "rank": 4,
        "shots": 100000,
        "count_model": "multinomial",
        "exact": False,
        "restarts": 10,
        "max_iter": 50000,
        "phase_grid": None,
        "gauge_probes": 0,
    },
}

_SUBCOMMAND_MODES = {
    "phase-diagram": ("phase-diagram",),
    "quench": ("quench-unitary", "quench-ensemble", "quench-lindblad"),
    "scaling": ("scaling",),
    "tomography": ("tomography-roundtrip",),
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _is_int(x):
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float, np.number)) and not isinstance(x, bool) and np.isfinite(x)


def validate(cfg: dict) -> dict:
    _require(cfg["mode"] in MODES, f"mode must be one of {MODES}, got {cfg['mode']!r}")
    _require(_is_int(cfg["grid"]) and cfg["grid"] >= 8, "grid must be an integer >= 8")
    _require(_is_int(cfg["seed"]) and 0 <= cfg["seed"] < 2**64, "seed must be an unsigned 64-bit integer")
    _require(_is_int(cfg["threads"]) and cfg["threads"] >= 1, "threads must be a positive integer")
    _require(isinstance(cfg["out"], str) and cfg["out"], "out must be a directory path")
    for key in ("theta_i", "theta_f"):
        v = cfg[key]
        _require(isinstance(v, list) and len(v) == 2 and all(_is_num(a) for a in v), f"{key} must be two numbers")
    _require(_is_int(cfg["steps"]) and cfg["steps"] >= 1, "steps must be a positive integer")
    _require(isinstance(cfg["dump_density"], bool), "dump_density must be true/false")
    d = cfg["disorder"]
    _require(_is_num(d["delta_theta1"]) and d["delta_theta1"] >= 0, "disorder.delta_theta1 must be >= 0")
    _require(_is_int(d["n_realizations"]) and d["n_realizations"] >= 1, "disorder.n_realizations must be >= 1")
    _require(d["sampling"] in ("uniform-grid", "random"), "disorder.sampling must be uniform-grid or random")
    _require(isinstance(d["resample_per_step"], bool), "disorder.resample_per_step must be true/false")
    n = cfg["noise"]
    g = n["gamma"]
    if isinstance(g, str):
        _require(g == "calibrated", "noise.gamma must be a number, a list or 'calibrated'")
    elif isinstance(g, list):
        _require(len(g) == cfg["grid"] and all(_is_num(x) and x >= 0 for x in g), "noise.gamma list must have one rate >= 0 per node")
    else:
        _require(_is_num(g) and g >= 0, "noise.gamma must be >= 0")
    _require(n["calibration"] in ("per-step", "per-k"), "noise.calibration must be per-step or per-k")
    p = cfg["phase_diagram"]
    _require(_is_int(p["resolution"]) and p["resolution"] >= 2, "phase_diagram.resolution must be >= 2")
    for key in ("theta1_range", "theta2_range"):
        r = p[key]
        _require(isinstance(r, list) and len(r) == 2 and all(_is_num(a) for a in r) and r[0] < r[1],
                 f"phase_diagram.{key} must be [lo, hi] with lo < hi")
    _require(_is_int(p["boundary_grid"]) and p["boundary_grid"] >= 8, "phase_diagram.boundary_grid must be >= 8")
    _require(_is_num(p["gap_threshold"]) and p["gap_threshold"] > 0, "phase_diagram.gap_threshold must be > 0")
    s = cfg["scaling"]["steps"]
    _require(isinstance(s, list) and len(set(s)) >= 3 and all(_is_int(x) and x >= 1 for x in s),
             "scaling.steps needs at least three distinct positive integers")
    t = cfg["tomography"]
    _require(_is_int(t["steps"]) and t["steps"] >= 1, "tomography.steps must be >= 1")
    _require(t["state"] in ("ensemble", "unitary"), "tomography.state must be ensemble or unitary")
    _require(t["rank"] is None or (_is_int(t["rank"]) and t["rank"] >= 1), "tomography.rank must be >= 1 or null")
    _require(_is_int(t["shots"]) and t["shots"] >= 1, "tomography.shots must be >= 1")
    _require(t["count_model"] in ("multinomial", "binomial", "poisson"), "unknown tomography.count_model")
    _require(isinstance(t["exact"], bool), "tomography.exact must be true/false")
    _require(_is_int(t["restarts"]) and t["restarts"] >= 1, "tomography.restarts must be >= 1")
    _require(_is_int(t["max_iter"]) and t["max_iter"] >= 1, "tomography.max_iter must be >= 1")
    _require(t["phase_grid"] is None or (_is_int(t["phase_grid"]) and t["phase_grid"] >= 8),
             "tomography.phase_grid must be null or an integer >= 8")
    _require(_is_int(t["gauge_probes"]) and t["gauge_probes"] >= 0, "tomography.gauge_probes must be >= 0")
    return cfg


def _env_value(name, cast):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return None
    try:
        return cast(raw)
    except ValueError as err:
        raise ConfigError(f"{ENV_PREFIX}{name}={raw!r}: {err}") from None


def load_config(subcommand: str, path: str | None = None, flags: dict | None = None) -> dict:
    """Defaults < config file < environment < flags.  Returns the full, validated config."""
    user = {}
    path = path or os.environ.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(DEFAULTS, user)
    allowed = _SUBCOMMAND_MODES[subcommand]
    if cfg["mode"] is None:
        cfg["mode"] = "quench-ensemble" if subcommand == "quench" else allowed[0]
    _require(cfg["mode"] in allowed, f"mode {cfg['mode']!r} does not belong to subcommand {subcommand!r}")
    for key, cast in (("seed", int), ("out", str), ("threads", int), ("grid", int)):
        v = _env_value(key.upper(), cast)
        if v is not None:
            cfg[key] = v
    for key, v in (flags or {}).items():
        if v is not None:
            cfg[key] = v
    return validate(cfg)
