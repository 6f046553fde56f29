"""Run configuration: YAML file, published JSON schema, defaults, hashing.

Unknown keys are rejected. Defaults reproduce the reference settings
(k_max=100, s=1, a_tau=1, a_mu=0.01, a0=b0=1, a=2, b=1e-6, N=1000,
zeta=0.95, ESS_min=N/2, c=0.2, delta_x=delta_a=1).
"""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema
import yaml

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "prior": {"s": 1.0, "a_tau": 1.0, "a_mu": 0.01, "a0_amp": 1.0, "b0_amp": 1.0,
              "a_noise": 2.0, "b_noise": 1e-6, "k_max": 100},
    "moves": {"c": 0.2, "delta_x": 1.0, "delta_a": 1.0, "step_amp": None, "step_scale": 0.5,
              "step_loc": 0.1, "amp_scale": None},
    "smc": {"n_particles": 1000, "zeta": 0.95, "ess_min_frac": 0.5, "n_sweeps": 5,
            "shuffle": False, "x_range": None, "standardize_y": False},
    "solver": {"name": "cohesive", "options": {}},
    "generate": {"n_train": 150, "n_pi_x": 5000},
    "predict": {"y0": None, "levels": [0.01, 0.99], "speed_ratio": 1069.0, "grid": None,
                "score_method": "quantile_gap", "top": None},
    "paths": {"pairs": None, "pi_x": None, "checkpoint": None, "out": None},
}

# keys that do not change any numerical result
_NON_RESULT_KEYS = ("workers", "paths")


def schema() -> dict:
    """The published JSON schema of configuration files."""
    text = resources.files("approxuq").joinpath("data/config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "options":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    levels = cfg.get("predict", {}).get("levels")
    if levels is not None and any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("config error at predict/levels: levels must be strictly increasing")
    return cfg


def resolve(user: dict | None = None) -> dict:
    """Validate ``user`` and fill in defaults."""
    user = {} if user is None else user
    if not isinstance(user, dict):
        raise ConfigError("config error at <root>: expected a mapping")
    validate(user)
    return validate(_merge(DEFAULTS, user))


def load(path) -> dict:
    """Read and resolve a YAML configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return resolve(user or {})


def config_hash(cfg: dict) -> str:
    """Short digest of every setting that can change a numerical result."""
    relevant = {k: v for k, v in cfg.items() if k not in _NON_RESULT_KEYS}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def estimator_params(cfg: dict) -> dict:
    p = {}
    p.update(cfg["prior"])
    p.update(cfg["moves"])
    smc = dict(cfg["smc"])
    p.update(smc)
    p["random_state"] = int(cfg["seed"])
    return p


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)
