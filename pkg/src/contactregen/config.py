"""Flat run configuration: one key-value table with per-command defaults.

A config file is a YAML (or JSON) mapping of keys from :data:`DEFAULTS`.
Keys whose default is ``None`` in the table are filled by a rule (window
margin, verification margin, ...) or by the command's own default.
"""
from __future__ import annotations

import hashlib
import json
import math

import yaml

from .errors import ConfigError
from .graphical import default_margin
from .percolation import FieldMode

COMMANDS = ("survival", "endpoint-equality", "agreement", "shape",
            "breakpoints", "restart", "clt", "percolation", "deficit-decay",
            "scan-runs")

DEFAULTS = {
    # contact process
    "mu": 3.0,
    "M": 1,
    "horizon": 100.0,
    "window_margin": None,        # ceil(3 * M * mu * horizon)
    "mus": None,                  # survival: [mu]
    "start": "origin",            # endpoint-equality: origin | block
    "horizons": None,             # [horizon]; breakpoints: T/8, T/4, T/2, T
    "set_size": 1,
    "from_times": None,           # agreement: [0.0]
    "speed": 0.1,
    "t0": None,                   # horizon / 10
    "verification_margin": None,  # horizon / 4
    "min_pairs": 0,
    "cse_replicas": 200,
    # percolation
    "epsilon": 0.1,
    "mode": "independent",
    "n_max": 60,
    "ns": [2, 4, 6, 8, 10, 12],
    "beta": 0.5,
    "b": 0.25,
    "rho": None,                  # deficit-decay: pilot calibration
    "pilot_replicas": 1000,
    "pilot_n": None,              # first entry of ns
    "y_fraction": 0.5,
    # orchestration
    "seed": 0,
    "replicas": 100,
    "workers": 1,
    "level": 0.95,
    "test_level": 0.01,
    "contamination_threshold": 0.01,
    "doubling_replicas": 100,
}

COMMAND_DEFAULTS = {
    "breakpoints": {"horizon": 200.0, "replicas": 10},
    "restart": {"horizon": 200.0},
    "clt": {"horizon": 200.0},
    "shape": {"horizon": 200.0},
    "deficit-decay": {"epsilon": 0.3, "mode": "one_dependent", "n_max": 80,
                      "ns": [20, 40, 60, 80], "replicas": 4000},
    "scan-runs": {"epsilon": 0.3, "mode": "one_dependent", "n_max": 80,
                  "ns": [20, 40, 60, 80], "rho": 0.3, "replicas": 2000},
}


def defaults_for(command: str) -> dict:
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    table = dict(DEFAULTS)
    table.update(COMMAND_DEFAULTS.get(command, {}))
    return table


def load_source(text: str) -> dict:
    doc = yaml.safe_load(text) if text.strip() else {}
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config", "must be a key-value mapping")
    return doc


def parse_config(source: str | dict, command: str = "survival",
                 overrides: dict | None = None) -> dict:
    """Validated, fully resolved configuration for ``command``.

    ``source`` is YAML/JSON text or an already loaded mapping.
    """
    raw = load_source(source) if isinstance(source, str) else dict(source)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    table = defaults_for(command)
    for key in raw:
        if key not in table:
            raise ConfigError(key, "unknown key")
    cfg = dict(table)
    cfg.update(raw)
    return _resolve(cfg, command)


def _num(cfg, key, kind=float):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, "must be a number")
    if kind is int:
        if int(v) != v:
            raise ConfigError(key, "must be an integer")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(key, "must be finite")
    cfg[key] = v
    return v


def _list(cfg, key, kind=float):
    v = cfg[key]
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(key, "must be a nonempty list")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(key, "entries must be numbers")
        if kind is int and int(x) != x:
            raise ConfigError(key, "entries must be integers")
        out.append(kind(x))
    cfg[key] = sorted(out)
    return cfg[key]


def _check(cond, key, rule):
    if not cond:
        raise ConfigError(key, rule)


def _resolve(cfg: dict, command: str) -> dict:
    mu = _num(cfg, "mu")
    _check(mu > 0, "mu", "must be > 0")
    M = _num(cfg, "M", int)
    _check(M >= 1, "M", "must be >= 1")
    T = _num(cfg, "horizon")
    _check(T > 0, "horizon", "must be > 0")
    if cfg["mus"] is None:
        cfg["mus"] = [mu]
    mus = _list(cfg, "mus")
    _check(all(m > 0 for m in mus), "mus", "entries must be > 0")
    top = max(mus) if command == "survival" else mu
    if cfg["window_margin"] is None:
        cfg["window_margin"] = default_margin(top, M, T)
    margin = _num(cfg, "window_margin", int)
    _check(margin >= M, "window_margin", "must be >= M")
    _check(cfg["start"] in ("origin", "block"), "start",
           "must be 'origin' or 'block'")
    if cfg["horizons"] is None:
        cfg["horizons"] = ([T / 8, T / 4, T / 2, T] if command == "breakpoints"
                           else [T])
    hs = _list(cfg, "horizons")
    _check(0 < hs[0] and hs[-1] <= T, "horizons", "entries must lie in (0, horizon]")
    _check(_num(cfg, "set_size", int) >= 1, "set_size", "must be >= 1")
    if cfg["from_times"] is None:
        cfg["from_times"] = [0.0]
    ft = _list(cfg, "from_times")
    _check(0 <= ft[0] and ft[-1] <= T, "from_times",
           "entries must lie in [0, horizon]")
    _check(_num(cfg, "speed") > 0, "speed", "must be > 0")
    if cfg["t0"] is None:
        cfg["t0"] = T / 10
    _check(0 <= _num(cfg, "t0") <= T, "t0", "must lie in [0, horizon]")
    if cfg["verification_margin"] is None:
        cfg["verification_margin"] = T / 4
    _check(0 <= _num(cfg, "verification_margin") <= T, "verification_margin",
           "must lie in [0, horizon]")
    _check(_num(cfg, "min_pairs", int) >= 0, "min_pairs", "must be >= 0")
    _check(_num(cfg, "cse_replicas", int) >= 1, "cse_replicas", "must be >= 1")
    if command in ("restart", "breakpoints"):
        _check(T >= 1, "horizon", "must be >= 1 for break points")

    eps = _num(cfg, "epsilon")
    _check(0 <= eps < 1, "epsilon", "must lie in [0, 1)")
    try:
        cfg["mode"] = FieldMode(cfg["mode"]).value
    except ValueError:
        raise ConfigError("mode", "must be 'independent' or 'one_dependent'")
    n_max = _num(cfg, "n_max", int)
    _check(n_max >= 1, "n_max", "must be >= 1")
    ns = _list(cfg, "ns", int)
    _check(1 <= ns[0] and ns[-1] <= n_max, "ns", "entries must lie in [1, n_max]")
    beta = _num(cfg, "beta")
    _check(0 < beta < 1, "beta", "must lie in (0, 1)")
    b = _num(cfg, "b")
    _check(0 < b <= beta, "b", "must lie in (0, beta]")
    if command == "scan-runs":
        _check(math.floor(b * ns[0]) >= 1, "b", "floor(b n) must be >= 1")
    if cfg["rho"] is not None:
        _check(0 < _num(cfg, "rho") < 1, "rho", "must lie in (0, 1)")
    elif command == "scan-runs":
        raise ConfigError("rho", "required for scan-runs")
    _check(_num(cfg, "pilot_replicas", int) >= 1, "pilot_replicas", "must be >= 1")
    if cfg["pilot_n"] is None:
        cfg["pilot_n"] = ns[0]
    pn = _num(cfg, "pilot_n", int)
    _check(1 <= pn <= n_max, "pilot_n", "must lie in [1, n_max]")
    _check(0 < _num(cfg, "y_fraction") <= 1, "y_fraction", "must lie in (0, 1]")

    seed = _num(cfg, "seed", int)
    _check(0 <= seed < 2**63, "seed", "must lie in [0, 2^63)")
    _check(_num(cfg, "replicas", int) >= 1, "replicas", "must be >= 1")
    _check(_num(cfg, "workers", int) >= 1, "workers", "must be >= 1")
    _check(0 < _num(cfg, "level") < 1, "level", "must lie in (0, 1)")
    _check(0 < _num(cfg, "test_level") < 1, "test_level", "must lie in (0, 1)")
    _check(0 <= _num(cfg, "contamination_threshold") <= 1,
           "contamination_threshold", "must lie in [0, 1]")
    _check(_num(cfg, "doubling_replicas", int) >= 1, "doubling_replicas",
           "must be >= 1")
    return cfg


def config_digest(command: str, cfg: dict) -> str:
    text = json.dumps({"command": command, "config": cfg}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def default_table(command: str) -> str:
    table = defaults_for(command)
    width = max(len(k) for k in table)
    return "\n".join(f"{k:<{width}}  {json.dumps(v)}" for k, v in table.items())
