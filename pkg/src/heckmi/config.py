"""Run configuration: JSON documents validated against a fixed schema.

Impute configuration::

    {
      "seed": 11,
      "m": 5,
      "iterations": 10,
      "cluster_column": "cluster",
      "meta": {"psi_structure": "full"},
      "imputations": [
        {"name": "y", "target": "y", "family": "continuous", "method": "heckman_2l",
         "outcome_predictors": ["X1", "X2"], "selection_predictors": ["X1", "X2", "X3"]}
      ]
    }

Simulate configuration::

    {
      "seed": 2023,
      "meta": {"psi_structure": "full"},
      "simulation": {
        "n_reps": 100, "m": 5,
        "methods": ["cca", "heckman_1l", "mar_2l", "heckman_2l"],
        "scenarios": [{"name": "base", "family": "continuous", "rho": 0.6,
                       "n_clusters": 10, "cluster_size": 1000, "error_model": "bvn"}],
        "rho_grid": [0, 0.3, 0.6, 0.9]
      }
    }

``rho_grid``, when present, expands every scenario into one copy per
value. Unknown keys anywhere are rejected.
"""

import json

import jsonschema

from .errors import SpecError
from .heckman import FAMILIES
from .mice import METHODS, ImputationSpec
from .sim.generate import ALL_METHODS, ERROR_MODELS, ScenarioConfig

_META = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"psi_structure": {"enum": ["full", "diagonal"]}},
}

_SPEC = {
    "type": "object",
    "additionalProperties": False,
    "required": ["target", "family", "outcome_predictors"],
    "properties": {
        "name": {"type": "string"},
        "target": {"type": "string"},
        "family": {"enum": list(FAMILIES)},
        "method": {"enum": list(METHODS)},
        "outcome_predictors": {"type": "array", "items": {"type": "string"}},
        "selection_predictors": {"type": "array", "items": {"type": "string"}},
        "cluster_column": {"type": "string"},
    },
}

_SCENARIO = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "family": {"enum": list(FAMILIES)},
        "rho": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
        "n_clusters": {"type": "integer", "minimum": 2},
        "cluster_size": {"type": "integer", "minimum": 1},
        "error_model": {"enum": list(ERROR_MODELS)},
    },
}

_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _SEED,
        "workers": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "cluster_column": {"type": "string"},
        "output_dir": {"type": "string"},
        "meta": _META,
        "imputations": {"type": "array", "items": _SPEC, "minItems": 1},
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["scenarios"],
            "properties": {
                "n_reps": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 2},
                "methods": {"type": "array", "items": {"enum": list(ALL_METHODS)}, "minItems": 1},
                "scenarios": {"type": "array", "items": _SCENARIO, "minItems": 1},
                "rho_grid": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                },
            },
        },
    },
}


def load(path):
    """Read and validate a configuration file; raises :class:`SpecError`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read config {path}: {exc}") from exc
    return validate(doc)


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"config error at {where}: {exc.message}") from exc
    return doc


def imputation_specs(doc):
    default_cluster = doc.get("cluster_column", "cluster")
    specs = []
    for i, raw in enumerate(doc.get("imputations", [])):
        spec = ImputationSpec(
            target=raw["target"],
            family=raw["family"],
            outcome_predictors=raw["outcome_predictors"],
            selection_predictors=raw.get("selection_predictors", []),
            cluster_column=raw.get("cluster_column", default_cluster),
            method=raw.get("method", "heckman_2l"),
            name=raw.get("name", raw["target"]),
        )
        spec.validate()
        specs.append(spec)
    if not specs:
        raise SpecError("config has no 'imputations' entries")
    return specs


def scenarios(doc, seed=None, reps=None, m=None):
    sim = doc.get("simulation")
    if sim is None:
        raise SpecError("config has no 'simulation' section")
    psi = doc.get("meta", {}).get("psi_structure", "full")
    seed = doc.get("seed", 2023) if seed is None else seed
    n_reps = sim.get("n_reps", 100) if reps is None else reps
    m = sim.get("m", 5) if m is None else m
    methods = tuple(sim.get("methods", ALL_METHODS))
    grid = sim.get("rho_grid")
    out = []
    for raw in sim["scenarios"]:
        rhos = grid if grid is not None else [raw.get("rho", 0.6)]
        for rho in rhos:
            kw = {k: v for k, v in raw.items() if k not in ("rho", "name")}
            cfg = ScenarioConfig(rho=float(rho), n_reps=n_reps, seed=seed, methods=methods, m=m,
                                 psi_structure=psi, **kw)
            if "name" in raw:
                cfg.name = raw["name"] if grid is None else f"{raw['name']}_rho{float(rho):g}"
            try:
                cfg.validate()
            except ValueError as exc:
                raise SpecError(f"scenario {cfg.name!r}: {exc}") from exc
            out.append(cfg)
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        raise SpecError("scenario names must be unique")
    return out
