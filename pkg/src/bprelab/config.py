"""Experiment configuration: JSON schema, validation and overrides.

A config selects one campaign, one environment model (or a list of them
for the ``delta`` and ``extinction`` campaigns), numeric parameters, seeds
and an output directory. Unknown keys are rejected everywhere.
"""

import copy
import json
import os
from importlib import resources

import jsonschema

CAMPAIGNS = ("simulate", "rate", "clt", "tail", "mgf", "delta", "extinction", "calibrate")

_law = {
    "type": "object",
    "required": ["family"],
    "properties": {"family": {"enum": ["poisson", "geometric_shifted", "finite", "power_tail"]}},
    "allOf": [
        {"if": {"properties": {"family": {"const": "poisson"}}},
         "then": {"properties": {"family": {}, "lambda": {"type": "number", "exclusiveMinimum": 0}},
                  "required": ["lambda"], "additionalProperties": False}},
        {"if": {"properties": {"family": {"const": "geometric_shifted"}}},
         "then": {"properties": {"family": {},
                                 "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                  "required": ["s"], "additionalProperties": False}},
        {"if": {"properties": {"family": {"const": "finite"}}},
         "then": {"properties": {"family": {},
                                 "pmf": {"type": "array", "minItems": 1,
                                         "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                   "prefixItems": [{"type": "integer", "minimum": 0},
                                                                   {"type": "number", "minimum": 0}]}}},
                  "required": ["pmf"], "additionalProperties": False}},
        {"if": {"properties": {"family": {"const": "power_tail"}}},
         "then": {"properties": {"family": {},
                                 "exponent": {"type": "number", "exclusiveMinimum": 1},
                                 "kmax": {"type": "integer", "minimum": 1}},
                  "additionalProperties": False}},
    ],
}

_prob_vector = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

_model = {
    "type": "object",
    "required": ["kind", "laws"],
    "properties": {
        "kind": {"enum": ["deterministic", "iid", "markov"]},
        "laws": {"type": "array", "items": _law, "minItems": 1},
        "extend": {"enum": ["repeat_last", "cyclic"]},
        "probs": _prob_vector,
        "transition": {"type": "array", "items": _prob_vector, "minItems": 1},
        "initial": _prob_vector,
    },
    "additionalProperties": False,
}

_int_list = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}
_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}

_params = {
    "type": "object",
    "properties": {
        "n": {"type": "integer", "minimum": 0},
        "n_range": {"type": "array", "items": {"type": "integer", "minimum": 0},
                    "minItems": 2, "maxItems": 2},
        "n_list": _int_list,
        "reps": {"type": "integer", "minimum": 1},
        "depth": {"type": "integer", "minimum": 1},
        "limit_depth": {"type": "integer", "minimum": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "cap": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["quenched", "annealed"]},
        "env_reps": {"type": "integer", "minimum": 1},
        "repeats": {"type": "integer", "minimum": 1},
        "min_pass_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "tolerance": {"type": "number", "minimum": 0},
        "variance_tolerance": {"type": "number", "minimum": 0},
        "se_multiple": {"type": "number", "exclusiveMinimum": 0},
        "validity_fraction": {"type": "number", "exclusiveMinimum": 0},
        "sided": {"enum": ["one", "two"]},
        "statistic": {"enum": ["mean_abs", "mean_square", "median_abs"]},
        "target": {
            "type": "object",
            "properties": {"kind": {"enum": ["exponential", "polynomial"]},
                           "p": {"type": "number"}, "alpha": {"type": "number"},
                           "a": {"type": "number"}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        "eps_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                     "minItems": 1},
        "t_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "n_cap": {"type": "integer", "minimum": 1},
        "mc_t": {"type": "number", "minimum": 0},
        "mc_reps": {"type": "integer", "minimum": 2},
        "mc_depth": {"type": "integer", "minimum": 1},
        "value_checks": {"type": "array", "items": {
            "type": "object",
            "properties": {"t": {"type": "number", "minimum": 0}, "value": {"type": "number"},
                           "tol": {"type": "number", "minimum": 0}},
            "required": ["t", "value", "tol"], "additionalProperties": False}},
        "expect_divergent": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "expected": {"type": "array", "items": {"type": "number"}},
        "rel_tol": {"type": "number", "minimum": 0},
        "ks_final_max": {"type": "number", "exclusiveMinimum": 0},
        "instances": {"type": "integer", "minimum": 1},
        "sampler_draws": {"type": "integer", "minimum": 100},
        "z_max": {"type": "integer", "minimum": 1},
        "increment_tol": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["campaign"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "campaign": {"enum": list(CAMPAIGNS)},
        "model": _model,
        "models": {"type": "array", "items": _model, "minItems": 1},
        "params": _params,
        "seeds": {
            "type": "object",
            "properties": {"traj_seed": {"type": "integer", "minimum": 0},
                           "env_seed": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "samples": {"type": "boolean"},
                           "trajectory": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "workers": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _where(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate(config):
    """Validate against the schema and the campaign's required fields."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    # unknown-key errors first, so the message names the stray key
    errors = sorted(v.iter_errors(config),
                    key=lambda e: (e.validator != "additionalProperties",
                                   len(list(e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(f"config invalid at {_where(e)}: {e.message}")
    camp = config["campaign"]
    has_model = "model" in config
    has_models = "models" in config
    if has_model and has_models:
        raise ConfigError("config invalid: give either 'model' or 'models', not both")
    if camp == "calibrate":
        return
    if has_models and camp not in ("delta", "extinction"):
        raise ConfigError(f"config invalid: 'models' is only allowed for delta and extinction, "
                          f"not campaign '{camp}'")
    if not (has_model or has_models):
        raise ConfigError("config invalid: missing key 'model'")
    params = config.get("params", {})
    need = {
        "simulate": ["n"],
        "rate": ["target", "reps", "depth"],
        "clt": ["n_list", "reps", "depth"],
        "tail": ["n_list", "eps_list", "reps", "depth"],
        "mgf": ["t_grid", "n_cap"],
        "extinction": ["depth"],
    }.get(camp, [])
    for key in need:
        if key not in params:
            raise ConfigError(f"config invalid: campaign '{camp}' needs params.{key}")
    if camp == "rate" and "n_range" not in params and "n_list" not in params:
        raise ConfigError("config invalid: campaign 'rate' needs params.n_range or params.n_list")


def parse_value(text):
    """JSON value if it parses, else the raw string."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def apply_override(config, dotted, value):
    """Set config[a][b][c] = value for ``dotted`` = 'a.b.c'."""
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"bad override key {dotted!r}")
    node = config
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted!r}: {k!r} is not an object")
        node = nxt
    node[keys[-1]] = value


def resolve(config, overrides=(), environ=None):
    """Copy of ``config`` with the seed from BPRE_SEED and then flag overrides applied.

    Precedence: flags, then the environment variable, then the file.
    """
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(config)
    seed_env = environ.get("BPRE_SEED")
    if seed_env not in (None, ""):
        try:
            seed = int(seed_env)
        except ValueError:
            raise ConfigError(f"BPRE_SEED must be an integer, got {seed_env!r}")
        out.setdefault("seeds", {})["traj_seed"] = seed
    for dotted, value in overrides:
        apply_override(out, dotted, value)
    out.setdefault("seeds", {})
    out["seeds"].setdefault("traj_seed", 0)
    out["seeds"].setdefault("env_seed", 0)
    return out


def load(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}")


def preset_names():
    files = resources.files("bprelab").joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    f = resources.files("bprelab").joinpath("presets", f"{name}.json")
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; see 'bpre presets'")
    return json.loads(f.read_text())
