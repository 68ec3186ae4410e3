"""Run-configuration documents: JSON schema, validation and object building.

A run config is one JSON document with sections ``model`` (species count,
parameter means, rate sensitivities, initial state, penalty), ``env``
(nutrient/antibiotic schedules), ``sim`` (time grid and Newton settings),
``uncertainty`` (CoV and the free-parameter list), ``data``, ``prior``,
``tmcmc``, ``likelihood`` and ``output``. Documents are schema-validated
before any compute; unknown keys are rejected; error messages name the
offending JSON path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from .dataset import GenSpec
from .errors import ConfigError
from .inference import PriorSpec, TmcmcSettings
from .model import (Environment, MaterialParams, ParamSet, Schedule,
                    SimConfig, State, initial_state)

__all__ = ["RUN_CONFIG_SCHEMA", "load_config", "validate_config", "Problem",
           "build_problem", "build_prior", "build_tmcmc_settings",
           "build_genspec", "likelihood_options", "write_schema_files"]

_schedule_schema = {
    "oneOf": [
        {"type": "number", "minimum": 0},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["pieces"],
            "properties": {
                "pieces": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 2,
                        "items": {"type": "number"},
                    },
                },
            },
        },
    ]
}

_number_array = {"type": "array", "items": {"type": "number"}, "minItems": 1}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "biofilmcal run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "env", "sim"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "a_mean", "b_mean", "eta", "initial_phi"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "a_mean": {"type": "array", "items": _number_array},
                "b_mean": _number_array,
                "eta": _number_array,
                "eta_empty": {"type": "number", "exclusiveMinimum": 0},
                "initial_phi": _number_array,
                "initial_psi": {
                    "oneOf": [{"type": "number"}, _number_array]
                },
                "k_p": {"type": "number", "minimum": 0},
            },
        },
        "env": {
            "type": "object",
            "additionalProperties": False,
            "required": ["c_star", "alpha_star"],
            "properties": {
                "c_star": _schedule_schema,
                "alpha_star": _schedule_schema,
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_steps", "dt"],
            "properties": {
                "n_steps": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "newton_max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "uncertainty": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cov"],
            "properties": {
                "cov": {
                    "oneOf": [{"type": "number", "minimum": 0},
                              _number_array]
                },
                "free": {"type": "array", "items": {"type": "string"},
                         "minItems": 1},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "time_indices": {"type": "array",
                                 "items": {"type": "integer", "minimum": 1},
                                 "minItems": 1},
                "theta_star": _number_array,
                "seed": {"type": "integer", "minimum": 0},
                "backend": {"enum": ["full-model", "surrogate"]},
                "path": {"type": "string"},
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "required": ["bounds"],
            "properties": {
                "bounds": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "number"},
                    },
                },
            },
        },
        "tmcmc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 100},
                "target_weight_cov": {"type": "number", "exclusiveMinimum": 0},
                "proposal_scale": {"type": "number", "exclusiveMinimum": 0,
                                   "maximum": 1},
                "max_stages": {"type": "integer", "minimum": 1},
                "n_mcmc_steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "likelihood": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "moments": {"enum": ["sampled", "analytic"]},
                "n_samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "form": {"enum": ["standard", "paper-literal"]},
                "variance_floor": {"type": "number", "exclusiveMinimum": 0},
                "covariance": {"enum": ["diag", "full"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", json_path=str(path)) from None
    validate_config(doc)
    return doc


def validate_config(doc: dict, schema: dict | None = None) -> None:
    """Schema validation; raises :class:`ConfigError` naming the JSON path."""
    schema = schema or RUN_CONFIG_SCHEMA
    if jsonschema is None:
        raise ConfigError("jsonschema is required for config validation")
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(part) for part in err.absolute_path) or "$"
        raise ConfigError(err.message, json_path=path)
    _cross_checks(doc)


def _cross_checks(doc: dict) -> None:
    model = doc["model"]
    n = model["n"]
    a = np.asarray(model["a_mean"], dtype=float)
    if a.shape != (n, n):
        raise ConfigError(f"a_mean must be {n}x{n}", json_path="model.a_mean")
    if not np.array_equal(a, a.T):
        raise ConfigError("a_mean must be symmetric", json_path="model.a_mean")
    for key in ("b_mean", "eta", "initial_phi"):
        if len(model[key]) != n:
            raise ConfigError(f"{key} must have length {n}",
                              json_path=f"model.{key}")
    psi = model.get("initial_psi", 0.999)
    if isinstance(psi, list) and len(psi) != n:
        raise ConfigError(f"initial_psi must have length {n}",
                          json_path="model.initial_psi")
    free = _free_names(doc)
    try:
        ParamSet.from_names(free)
    except ValueError as exc:
        raise ConfigError(str(exc), json_path="uncertainty.free") from None
    unc = doc.get("uncertainty")
    if unc is not None and isinstance(unc["cov"], list) \
            and len(unc["cov"]) != len(free):
        raise ConfigError(f"cov must have length {len(free)}",
                          json_path="uncertainty.cov")
    data = doc.get("data")
    if data is not None:
        idx = data.get("time_indices")
        if idx is not None:
            if len(set(idx)) != len(idx):
                raise ConfigError("time_indices must be distinct",
                                  json_path="data.time_indices")
            if max(idx) > doc["sim"]["n_steps"]:
                raise ConfigError("time index beyond n_steps",
                                  json_path="data.time_indices")
        ts = data.get("theta_star")
        if ts is not None and len(ts) != len(free):
            raise ConfigError(f"theta_star must have length {len(free)}",
                              json_path="data.theta_star")
    prior = doc.get("prior")
    if prior is not None:
        missing = [nm for nm in free if nm not in prior["bounds"]]
        if missing:
            raise ConfigError(f"missing bounds for {missing}",
                              json_path="prior.bounds")
        for nm, (lo, hi) in prior["bounds"].items():
            if lo >= hi:
                raise ConfigError("bounds must satisfy lo < hi",
                                  json_path=f"prior.bounds.{nm}")


def _free_names(doc: dict) -> list[str]:
    unc = doc.get("uncertainty") or {}
    if "free" in unc:
        return list(unc["free"])
    return ParamSet.full(doc["model"]["n"]).names()


@dataclass(frozen=True)
class Problem:
    """Model objects built from a run config."""

    config: SimConfig
    params: MaterialParams
    env: Environment
    entries: ParamSet
    cov: np.ndarray
    theta0: np.ndarray


def build_problem(doc: dict) -> Problem:
    model = doc["model"]
    n = model["n"]
    params = MaterialParams(
        a=np.asarray(model["a_mean"], dtype=float),
        b=np.asarray(model["b_mean"], dtype=float),
        eta=np.asarray(model["eta"], dtype=float),
        eta_empty=float(model.get("eta_empty", 1.0)),
    )
    env = Environment(
        Schedule.from_json(doc["env"]["c_star"]),
        Schedule.from_json(doc["env"]["alpha_star"]),
        float(model.get("k_p", 1e-4)),
    )
    sim = doc["sim"]
    state = initial_state(model["initial_phi"], model.get("initial_psi", 0.999))
    config = SimConfig(
        n_species=n,
        n_steps=sim["n_steps"],
        dt=sim["dt"],
        initial_state=state,
        newton_tol=sim.get("newton_tol", 1e-10),
        newton_max_iter=sim.get("newton_max_iter", 50),
    )
    entries = ParamSet.from_names(_free_names(doc))
    unc = doc.get("uncertainty") or {"cov": 0.0}
    cov = np.asarray(unc["cov"], dtype=float)
    if cov.ndim == 0:
        cov = np.full(len(entries), float(cov))
    return Problem(config, params, env, entries, cov, entries.extract(params))


def build_prior(doc: dict, entries: ParamSet) -> PriorSpec:
    if "prior" not in doc:
        raise ConfigError("prior section required", json_path="prior")
    bounds_map = doc["prior"]["bounds"]
    names = entries.names()
    bounds = np.asarray([bounds_map[nm] for nm in names], dtype=float)
    return PriorSpec(bounds, names=tuple(names))


def build_tmcmc_settings(doc: dict, seed_override: int | None = None) -> TmcmcSettings:
    tm = doc.get("tmcmc") or {}
    return TmcmcSettings(
        n_samples_per_stage=tm.get("n_samples", 5000),
        target_weight_cov=tm.get("target_weight_cov", 1.0),
        proposal_scale=tm.get("proposal_scale", 0.2),
        max_stages=tm.get("max_stages", 50),
        seed=tm.get("seed", 0) if seed_override is None else seed_override,
        n_mcmc_steps=tm.get("n_mcmc_steps", 1),
    )


def build_genspec(doc: dict, entries: ParamSet,
                  seed_override: int | None = None) -> GenSpec:
    data = doc.get("data")
    if data is None or "theta_star" not in data or "time_indices" not in data:
        raise ConfigError("data.theta_star and data.time_indices required "
                          "to generate a dataset", json_path="data")
    unc = doc.get("uncertainty") or {"cov": 0.0}
    seed = data.get("seed", 0) if seed_override is None else seed_override
    return GenSpec(
        theta_star=np.asarray(data["theta_star"], dtype=float),
        cov=np.asarray(unc["cov"], dtype=float),
        time_indices=np.asarray(data["time_indices"], dtype=int),
        seed=seed,
        backend=data.get("backend", "full-model"),
        entries=entries,
    )


def likelihood_options(doc: dict) -> dict:
    lk = doc.get("likelihood") or {}
    return {
        "moments_method": lk.get("moments", "sampled"),
        "n_moment_samples": lk.get("n_samples", 500),
        "moments_seed": lk.get("seed", 0),
        "likelihood_form": lk.get("form", "standard"),
        "variance_floor": lk.get("variance_floor", 1e-12),
        "covariance": lk.get("covariance", "diag"),
    }


def write_schema_files(directory) -> None:
    """Publish the JSON schemas (run config and stage plan) to a directory."""
    from pathlib import Path

    from .pipeline import PLAN_SCHEMA

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "runconfig.schema.json", "w", encoding="utf-8") as fh:
        json.dump(RUN_CONFIG_SCHEMA, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / "plan.schema.json", "w", encoding="utf-8") as fh:
        json.dump(PLAN_SCHEMA, fh, indent=2, sort_keys=True)
        fh.write("\n")
