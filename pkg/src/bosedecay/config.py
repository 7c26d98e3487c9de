"""Run configuration: JSON schema, defaults and model construction."""

import copy
import hashlib
import json
from importlib import resources

import jsonschema
import numpy as np

from .hartree import HartreeProblem, quadratic_trap
from .potentials import BOUNDED, Grid1D, make_bounded_potential

_NUMBER = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POSINT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "many_body"],
    "properties": {
        "units": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["geometry", "L", "n", "potential"],
            "properties": {
                "geometry": {"enum": ["torus", "trap"]},
                "L": _POS,
                "n": {"type": "integer", "minimum": 8},
                "V_ext": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["zero", "quadratic"]}, "omega": _POS},
                },
                "potential": {
                    "type": "object",
                    "required": ["class", "fourier"],
                    "properties": {
                        "class": {"const": BOUNDED},
                        "fourier": {
                            "type": "array",
                            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                      "prefixItems": [{"type": "integer"}, _NUMBER]},
                        },
                        "symmetrize": {"type": "boolean"},
                    },
                },
            },
        },
        "hartree": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _POS, "max_iter": _POSINT, "init": {"enum": ["linear", "random"]}},
        },
        "many_body": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "m", "M"],
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "m": _POSINT,
                "M": {"type": "integer", "minimum": 0},
                "variant": {"enum": ["full", "bogoliubov"]},
                "kernel_method": {"enum": ["auto", "quadrature"]},
            },
        },
        "solve": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _POS, "seed": {"type": "integer", "minimum": 0}, "max_iter": _POSINT},
        },
        "analyses": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "decay": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "fit_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                        "parity": {"enum": ["even", "odd", "all"]},
                        "L_max": _POSINT,
                        "csv_L": _POSINT,
                        "stability_M": {"type": ["integer", "null"]},
                        "oracle_truncation": _POSINT,
                        "tail_cut": _POSINT,
                    },
                },
                "lemmas": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "which": {"type": "array", "items": {"enum": ["k1", "k2", "k3", "k4", "k2c", "gap"]}},
                        "samples": _POSINT,
                        "seed": {"type": "integer", "minimum": 0},
                        "delta": _POS,
                        "drift_samples": {"type": "array", "items": _POSINT, "minItems": 2, "maxItems": 2},
                    },
                },
                "coulomb": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "lambda": _POS,
                        "kappas": {"type": "array", "items": _POS, "minItems": 1},
                        "epsilon": _POS,
                        "samples": _POSINT,
                        "n": {"type": "integer", "minimum": 16},
                        "M": {"type": "integer", "minimum": 2},
                    },
                },
            },
        },
        "output_dir": {"type": "string"},
    },
}

DEFAULTS = {
    "hartree": {"tol": 1e-10, "max_iter": 500, "init": "linear"},
    "many_body": {"variant": "full", "kernel_method": "auto"},
    "solve": {"tol": 1e-10, "seed": 0, "max_iter": 2000},
    "analyses": {
        "decay": {"fit_range": [2, 8], "parity": "even", "L_max": 10, "csv_L": 2, "stability_M": None,
                  "oracle_truncation": 40, "tail_cut": 6},
        "lemmas": {"which": ["k1", "k2", "k3", "k4", "gap"], "samples": 1000, "seed": 0, "delta": 0.28,
                   "drift_samples": [500, 2000]},
        "coulomb": {"lambda": 1.0, "kappas": [1.0, 0.5, 0.25, 0.125], "samples": 500, "n": 512, "M": 6},
    },
    "output_dir": "runs/default",
}


class ConfigError(ValueError):
    """The configuration failed schema or consistency validation."""


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    """Schema plus cross-field checks; returns the config with defaults filled in."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, doc)
    mb = cfg["many_body"]
    if mb["N"] <= mb["M"]:
        raise ConfigError(f"many_body: need N > M (got N={mb['N']}, M={mb['M']})")
    if mb["m"] > cfg["model"]["n"] - 1:
        raise ConfigError("many_body: m must not exceed n - 1")
    stab = cfg["analyses"]["decay"]["stability_M"]
    if stab is not None and (stab <= mb["M"] or stab >= mb["N"]):
        raise ConfigError("analyses.decay.stability_M must satisfy M < stability_M < N")
    if cfg["model"]["geometry"] == "trap" and cfg["model"].get("V_ext", {}).get("kind", "quadratic") == "zero":
        raise ConfigError("model: a trap needs a confining V_ext")
    return cfg


def load(path):
    with open(path) as fh:
        return validate(json.load(fh))


def load_shipped(name="toy_torus.json"):
    text = resources.files("bosedecay").joinpath("configs", name).read_text()
    return validate(json.loads(text))


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)


def config_hash(section):
    return hashlib.sha256(json.dumps(section, sort_keys=True).encode()).hexdigest()


def build_model(cfg):
    """``(HartreeProblem, PairPotential)`` from the ``model`` section."""
    mod = cfg["model"]
    boundary = "periodic" if mod["geometry"] == "torus" else "hard-wall"
    grid = Grid1D(mod["n"], mod["L"], boundary=boundary)
    pot = mod["potential"]
    v = make_bounded_potential({int(k): c for k, c in pot["fourier"]}, grid,
                               symmetrize=pot.get("symmetrize", False))
    vext = mod.get("V_ext", {"kind": "zero" if boundary == "periodic" else "quadratic"})
    if vext["kind"] == "zero":
        V = np.zeros(grid.n)
    else:
        V = quadratic_trap(grid, vext.get("omega", 1.0))
    return HartreeProblem(grid, V, v), v
