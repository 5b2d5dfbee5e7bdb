"""Scenario configuration: schema, defaults and validation."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .errors import AlphaOutOfRange, ConfigError

SCENARIOS = ("uncontrolled", "constant-effort", "feedback", "game", "chaos-study",
             "gateaux-check", "dv-check", "lq-validate")

# key -> (type, check, message); check returns True when the value is acceptable
_NUM = (int, float)
_POS = (lambda v: v > 0, "must be positive")
_NONNEG = (lambda v: v >= 0, "must be nonnegative")
_ANY = (lambda v: True, "")
_ALPHA = (lambda v: v >= 1, "must be >= 1")

PARAM_SCHEMA = {
    "kappa": (_NUM, *_POS), "K": (_NUM, *_POS), "sigma": (_NUM, *_NONNEG),
    "alpha": (_NUM, *_ALPHA), "theta1": (_NUM, *_ANY), "theta2": (_NUM, *_ANY),
    "c1": (_NUM, *_NONNEG), "c1_bar": (_NUM, *_NONNEG),
    "e": (_NUM, lambda v: -1 <= v <= 1, "must lie in [-1, 1]"),
    "x0": ((int, float, type(None)), *_ANY), "jitter": (_NUM, *_NONNEG),
    "modes": (list, lambda v: len(v) == 2, "must list two states"),
    "drift_mode": (str, lambda v: v in ("signed", "norm"), "must be 'signed' or 'norm'"),
    "mf_term": (str, lambda v: v in ("catalog", "printed"), "must be 'catalog' or 'printed'"),
}
SOLVER_SCHEMA = {
    "damping": (_NUM, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "tol": (_NUM, *_POS), "max_iter": (int, lambda v: v >= 1, "must be >= 1"),
    "bins": (int, lambda v: v >= 2, "must be >= 2"),
}
CHAOS_SCHEMA = {
    "n_list": (list, lambda v: len(v) >= 2 and all(isinstance(a, int) and a > 0 for a in v)
               and all(b > a for a, b in zip(v, v[1:])), "must be an ascending list of positive integers"),
    "reps": (int, lambda v: v >= 1, "must be >= 1"),
    "mu": (_NUM, *_POS), "sigma": (_NUM, *_NONNEG),
    "alphas": (list, lambda v: len(v) >= 1 and all(isinstance(a, _NUM) and a >= 1 for a in v),
               "must be a nonempty list of values >= 1"),
    "tabulate": (int, lambda v: v >= 8, "must be >= 8"),
}
GATEAUX_SCHEMA = {
    "instances": (int, lambda v: v >= 1, "must be >= 1"),
    "eps": (_NUM, *_POS),
}
DV_SCHEMA = {
    "instances": (int, lambda v: v >= 1, "must be >= 1"),
    "max_support": (int, lambda v: 2 <= v <= 8, "must lie in [2, 8]"),
    "perturbations": (int, lambda v: v >= 1, "must be >= 1"),
}
LQ_SCHEMA = {
    "a": (_NUM, *_ANY), "q": (_NUM, *_NONNEG), "r": (_NUM, *_POS), "s": (_NUM, *_NONNEG),
    "sigma": (_NUM, *_NONNEG), "box": (_NUM, *_POS),
}
TOP_SCHEMA = {
    "scenario": (str, lambda v: v in SCENARIOS, f"must be one of {', '.join(SCENARIOS)}"),
    "seed": (int, lambda v: 0 <= v < 2 ** 63, "must be a nonnegative 63-bit integer"),
    "n": (int, lambda v: v >= 1, "must be >= 1"),
    "dt": (_NUM, *_POS), "horizon": (_NUM, *_POS),
    "out": (str, *_ANY),
    "mean_field": (bool, *_ANY),
    "on_blowup": (str, lambda v: v in ("abort", "absorb"), "must be 'abort' or 'absorb'"),
}
SECTIONS = {"params": PARAM_SCHEMA, "solver": SOLVER_SCHEMA, "chaos": CHAOS_SCHEMA,
            "gateaux": GATEAUX_SCHEMA, "dv": DV_SCHEMA, "lq": LQ_SCHEMA}

# scenario-specific defaults for n and dt
SCENARIO_DEFAULTS = {
    "uncontrolled": {"n": 2000, "dt": 1e-3, "on_blowup": "absorb"},
    "constant-effort": {"n": 2000, "dt": 1e-3, "mean_field": False},
    "feedback": {"n": 2000, "dt": 1e-3},
    "game": {"n": 2000, "dt": 1e-2},
    "chaos-study": {"dt": 2e-2},
    "gateaux-check": {},
    "dv-check": {},
    "lq-validate": {"n": 10000, "dt": 1e-2},
}
DEFAULTS = {
    "seed": 7, "horizon": 1.0, "out": None, "on_blowup": "abort",
    "params": {},
    "solver": {"damping": 0.5, "tol": 1e-3, "max_iter": 50, "bins": 32},
    "chaos": {"n_list": [64, 128, 256, 512, 1024, 2048], "reps": 8, "mu": 1.0,
              "sigma": 0.1, "alphas": [1.0, 1.2, 2.0], "tabulate": 160},
    "gateaux": {"instances": 50, "eps": 1e-4},
    "dv": {"instances": 100, "max_support": 8, "perturbations": 1000},
    "lq": {"a": 0.5, "q": 1.0, "r": 1.0, "s": 0.5, "sigma": 0.3, "box": 50.0},
}


@dataclass(frozen=True)
class Diagnostic:
    key: str
    kind: str
    message: str

    def __str__(self):
        return f"{self.key}: {self.message} [{self.kind}]"


def _check_section(data, schema, prefix, out):
    if not isinstance(data, dict):
        out.append(Diagnostic(prefix.rstrip("."), "TypeError", "must be a mapping"))
        return
    for key, val in data.items():
        full = prefix + str(key)
        if key not in schema:
            out.append(Diagnostic(full, "UnknownKey", "unknown key"))
            continue
        typ, check, msg = schema[key]
        if isinstance(val, bool) and typ is not bool and bool not in (typ if isinstance(typ, tuple) else (typ,)):
            out.append(Diagnostic(full, "TypeError", "has the wrong type"))
            continue
        if not isinstance(val, typ):
            out.append(Diagnostic(full, "TypeError", "has the wrong type"))
            continue
        if not check(val):
            kind = AlphaOutOfRange.__name__ if key in ("alpha", "alphas") else "RangeError"
            out.append(Diagnostic(full, kind, msg))


def validate_dict(raw, require_seed: bool = True) -> list:
    """Schema and range diagnostics for a raw config mapping; empty when valid."""
    out = []
    if not isinstance(raw, dict):
        return [Diagnostic("<root>", "TypeError", "config must be a mapping")]
    top = {k: v for k, v in raw.items() if k not in SECTIONS}
    _check_section(top, TOP_SCHEMA, "", out)
    for name, schema in SECTIONS.items():
        if name in raw:
            _check_section(raw[name], schema, name + ".", out)
    if "scenario" not in raw:
        out.append(Diagnostic("scenario", "MissingKey", "scenario is required"))
    if require_seed and "seed" not in raw:
        out.append(Diagnostic("seed", "MissingKey", "an explicit seed is required"))
    if not out:
        merged = resolve(raw)
        h, dt = merged["horizon"], merged.get("dt")
        if dt is not None:
            steps = round(h / dt)
            if steps < 1 or abs(steps * dt - h) > 1e-12 * max(1.0, h):
                out.append(Diagnostic("dt", "RangeError", "must divide the horizon"))
    return out


def resolve(raw: dict) -> dict:
    """Defaults overlaid with the config (section-wise)."""
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(SCENARIO_DEFAULTS.get(raw.get("scenario"), {}))
    for k, v in raw.items():
        if k in SECTIONS:
            cfg[k] = dict(cfg.get(k, {}), **v)
        else:
            cfg[k] = v
    return cfg


def load_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return {} if raw is None else raw


def default_config(scenario: str) -> dict:
    """Built-in config used when no file is given; carries an explicit seed."""
    return {"scenario": scenario, "seed": DEFAULTS["seed"]}
