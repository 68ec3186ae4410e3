"""Staged (hierarchical) calibration plans for many-species systems.

A plan decomposes the full system into submodel stages (species subsets),
calibrates each on its own dataset, fixes inferred parameters at their
MAP estimates for downstream stages, and assembles the full interaction
matrices at the end. Stage outputs are cached content-addressed under
``runs/<plan-hash>/<stage>/``; rerunning a completed plan with unchanged
configuration is a no-op.

Parameter names in plans are global (full-model, 1-based species ids);
each stage maps them onto its local species subset.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, GenSpec, generate_dataset, read_dataset, write_dataset
from .errors import BiofilmcalError, ConfigError
from .inference import (LogPosterior, PosteriorResult, PriorSpec,
                        TmcmcSettings, correlations, map_estimate,
                        save_posterior, tmcmc)
from .model import (Environment, MaterialParams, ParamSet, Schedule,
                    SimConfig, initial_state, parse_param_name)
from .pbox import envelope_area, pbox_from_posterior, write_pbox_csv
from .rom import UncertainInput, build_rom, moments_at
from .solver import simulate

__all__ = ["StagePlan", "PlanResult", "StageResult", "run_plan",
           "validate_plan", "load_plan", "PLAN_SCHEMA"]

_schedule_schema = {
    "oneOf": [
        {"type": "number", "minimum": 0},
        {"type": "object", "additionalProperties": False,
         "required": ["pieces"],
         "properties": {"pieces": {"type": "array", "minItems": 1,
                                   "items": {"type": "array", "minItems": 2,
                                             "maxItems": 2,
                                             "items": {"type": "number"}}}}},
    ]
}

_stage_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "species", "free", "model", "env", "sim",
                 "uncertainty", "data", "prior", "tmcmc"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "species": {"type": "array", "items": {"type": "integer", "minimum": 1},
                    "minItems": 1},
        "free": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "fixed": {
            "type": "object",
            "additionalProperties": {
                "oneOf": [
                    {"type": "object", "additionalProperties": False,
                     "required": ["literal"],
                     "properties": {"literal": {"type": "number"}}},
                    {"type": "object", "additionalProperties": False,
                     "required": ["stage", "param"],
                     "properties": {"stage": {"type": "string"},
                                    "param": {"type": "string"}}},
                ]
            },
        },
        "model": {"type": "object"},
        "env": {"type": "object", "additionalProperties": False,
                "required": ["c_star", "alpha_star"],
                "properties": {"c_star": _schedule_schema,
                               "alpha_star": _schedule_schema}},
        "sim": {"type": "object"},
        "uncertainty": {"type": "object"},
        "data": {"type": "object"},
        "prior": {"type": "object"},
        "tmcmc": {"type": "object"},
        "likelihood": {"type": "object"},
    },
}

PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "biofilmcal stage plan",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "n_species", "stages"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "n_species": {"type": "integer", "minimum": 1},
        "model": {"type": "object"},
        "stages": {"type": "array", "items": _stage_schema, "minItems": 1},
        "validation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["base_stage", "env", "sim", "data"],
            "properties": {
                "base_stage": {"type": "string"},
                "env": {"type": "object"},
                "sim": {"type": "object"},
                "data": {"type": "object"},
                "predictive_samples": {"type": "integer", "minimum": 2},
            },
        },
    },
}


def load_plan(path) -> "StagePlan":
    from .config import validate_config

    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", json_path=str(path)) from None
    validate_config(doc, schema=PLAN_SCHEMA)
    return StagePlan(doc)


class StagePlan:
    """Validated stage plan; wraps the JSON document."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.name = doc["name"]
        self.n_species = doc["n_species"]
        self.stages = {s["name"]: s for s in doc["stages"]}
        if len(self.stages) != len(doc["stages"]):
            raise ConfigError("duplicate stage names", json_path="stages")
        self.order = self._topological_order()
        self._check_coverage()

    def _dependencies(self, stage: dict) -> set:
        deps = set()
        for source in (stage.get("fixed") or {}).values():
            if "stage" in source:
                if source["stage"] not in self.stages:
                    raise ConfigError(
                        f"stage {stage['name']} references unknown stage "
                        f"{source['stage']}", json_path="stages")
                deps.add(source["stage"])
        return deps

    def _topological_order(self) -> list:
        remaining = dict(self.stages)
        done: list = []
        while remaining:
            ready = [nm for nm, st in remaining.items()
                     if self._dependencies(st) <= set(done)]
            if not ready:
                raise ConfigError("stage dependencies contain a cycle",
                                  json_path="stages")
            for nm in sorted(ready):
                done.append(nm)
                del remaining[nm]
        return done

    def _check_coverage(self) -> None:
        """Every full-model parameter free in exactly one stage or fixed by
        literal; every stage's local submodel fully determined."""
        full_names = ParamSet.full(self.n_species).names()
        free_count = {nm: 0 for nm in full_names}
        literal: dict = {}
        for st in self.stages.values():
            species = sorted(st["species"])
            if species[-1] > self.n_species:
                raise ConfigError(f"stage {st['name']}: species id beyond "
                                  f"n_species", json_path="stages")
            local_needed = set(ParamSet.full(len(species)).names())
            covered = set()
            for nm in st["free"]:
                if nm not in free_count:
                    raise ConfigError(f"unknown parameter {nm}",
                                      json_path=f"stages.{st['name']}.free")
                free_count[nm] += 1
                covered.add(_to_local_name(nm, species, st["name"]))
            for nm, source in (st.get("fixed") or {}).items():
                if "literal" in source:
                    literal[nm] = source["literal"]
                covered.add(_to_local_name(nm, species, st["name"]))
            if covered != local_needed:
                raise ConfigError(
                    f"stage {st['name']}: local parameters "
                    f"{sorted(local_needed - covered)} are neither free nor "
                    f"fixed", json_path="stages")
        problems = [nm for nm, cnt in free_count.items()
                    if cnt != 1 and nm not in literal]
        if problems:
            raise ConfigError(
                f"parameters {problems} must be free in exactly one stage "
                f"or fixed by literal", json_path="stages")
        duplicated = [nm for nm, cnt in free_count.items() if cnt > 1]
        if duplicated:
            raise ConfigError(f"parameters {duplicated} free in more than "
                              f"one stage", json_path="stages")

    def plan_hash(self) -> str:
        blob = json.dumps(self.doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _to_local_name(global_name: str, species: list, stage_name: str) -> str:
    """Map a global parameter name onto the stage's local species indexing."""
    entry = parse_param_name(global_name)
    try:
        if entry[0] == "a":
            li = species.index(entry[1] + 1)
            lj = species.index(entry[2] + 1)
            lo, hi = sorted((li, lj))
            return f"a{lo + 1}{hi + 1}"
        li = species.index(entry[1] + 1)
        return f"b{li + 1}"
    except ValueError:
        raise ConfigError(
            f"parameter {global_name} does not live on stage "
            f"{stage_name}'s species subset {species}",
            json_path="stages") from None


@dataclass
class StageResult:
    name: str
    posterior: PosteriorResult
    map_values: dict
    correlations: np.ndarray
    dataset: Dataset
    elapsed: float
    cached: bool


@dataclass
class PlanResult:
    run_dir: Path
    stages: dict
    assembled: MaterialParams
    assembled_sources: dict
    failed: dict


# ---------------------------------------------------------------------------
# Stage execution


def _resolve_fixed(stage: dict, map_values: dict) -> dict:
    """Fixed global-name -> value, pulling MAPs from completed stages."""
    out = {}
    for nm, source in (stage.get("fixed") or {}).items():
        if "literal" in source:
            out[nm] = float(source["literal"])
        else:
            upstream = map_values.get(source["stage"])
            if upstream is None or source["param"] not in upstream:
                raise BiofilmcalError(
                    f"stage {stage['name']} needs MAP of "
                    f"{source['param']} from stage {source['stage']}")
            out[nm] = float(upstream[source["param"]])
    return out


def _stage_problem(stage: dict, fixed_values: dict):
    """Build the local submodel objects for one stage."""
    species = sorted(stage["species"])
    n_local = len(species)
    model = stage["model"]
    base_a = np.zeros((n_local, n_local))
    base_b = np.zeros(n_local)
    for nm, val in fixed_values.items():
        entry = parse_param_name(_to_local_name(nm, species, stage["name"]))
        if entry[0] == "a":
            base_a[entry[1], entry[2]] = val
            base_a[entry[2], entry[1]] = val
        else:
            base_b[entry[1]] = val
    params = MaterialParams(
        a=base_a, b=base_b,
        eta=np.asarray(model["eta"], dtype=float),
        eta_empty=float(model.get("eta_empty", 1.0)))
    env = Environment(
        Schedule.from_json(stage["env"]["c_star"]),
        Schedule.from_json(stage["env"]["alpha_star"]),
        float(model.get("k_p", 1e-4)))
    sim = stage["sim"]
    config = SimConfig(
        n_species=n_local, n_steps=sim["n_steps"], dt=sim["dt"],
        initial_state=initial_state(model["initial_phi"],
                                    model.get("initial_psi", 0.999)),
        newton_tol=sim.get("newton_tol", 1e-10),
        newton_max_iter=sim.get("newton_max_iter", 50))
    local_names = [_to_local_name(nm, species, stage["name"])
                   for nm in stage["free"]]
    entries = ParamSet.from_names(local_names)
    cov = np.asarray(stage["uncertainty"]["cov"], dtype=float)
    if cov.ndim == 0:
        cov = np.full(len(entries), float(cov))
    return species, config, params, env, entries, cov


def _stage_dataset(stage: dict, config, params, env, entries,
                   cov, run_stage_dir: Path) -> Dataset:
    data = stage["data"]
    if "path" in data:
        return read_dataset(data["path"])
    true_fixed = data.get("true_fixed") or {}
    gen_params = params
    if true_fixed:
        species = sorted(stage["species"])
        names = [_to_local_name(nm, species, stage["name"])
                 for nm in true_fixed]
        gen_entries = ParamSet.from_names(names)
        gen_params = gen_entries.apply(
            params, np.asarray([true_fixed[nm] for nm in true_fixed]))
    spec = GenSpec(
        theta_star=np.asarray(data["theta_star"], dtype=float),
        cov=cov,
        time_indices=np.asarray(data["time_indices"], dtype=int),
        seed=int(data["seed"]),
        backend=data.get("backend", "full-model"),
        entries=entries)
    ds = generate_dataset(config, gen_params, env, spec)
    write_dataset(ds, run_stage_dir / "dataset.csv")
    return ds


def _run_stage(stage: dict, fixed_values: dict, stage_dir: Path,
               threads: int) -> StageResult:
    from .config import likelihood_options

    t0 = time.perf_counter()
    stage_dir.mkdir(parents=True, exist_ok=True)
    _, config, params, env, entries, cov = _stage_problem(stage, fixed_values)
    data = _stage_dataset(stage, config, params, env, entries, cov, stage_dir)

    names = list(stage["free"])
    bounds = np.asarray([stage["prior"]["bounds"][nm] for nm in names],
                        dtype=float)
    prior = PriorSpec(bounds, names=tuple(names))
    tm = stage["tmcmc"]
    settings = TmcmcSettings(
        n_samples_per_stage=tm.get("n_samples", 5000),
        target_weight_cov=tm.get("target_weight_cov", 1.0),
        proposal_scale=tm.get("proposal_scale", 0.2),
        max_stages=tm.get("max_stages", 50),
        seed=tm.get("seed", 0),
        n_mcmc_steps=tm.get("n_mcmc_steps", 1))
    lk = likelihood_options({"likelihood": stage.get("likelihood") or {}})
    log_post = LogPosterior(prior, config, params, env, entries, cov, data,
                            **lk)
    posterior = tmcmc(log_post.log_likelihood, prior, settings,
                      threads=threads)
    posterior.counters = dict(log_post.counters)
    theta_map = map_estimate(posterior)
    map_values = {nm: float(v) for nm, v in zip(names, theta_map)}
    corr = correlations(posterior)

    save_posterior(posterior, stage_dir / "samples.csv",
                   stage_dir / "posterior.json")
    with open(stage_dir / "map.json", "w", encoding="utf-8") as fh:
        json.dump(map_values, fh, indent=2, sort_keys=True)
        fh.write("\n")
    pbox_dir = stage_dir / "pbox"
    pbox_dir.mkdir(exist_ok=True)
    for j, nm in enumerate(names):
        for env_tag in ("all", "credible95"):
            pb = pbox_from_posterior(posterior.samples[:, j], float(cov[j]),
                                     envelope=env_tag)
            write_pbox_csv(pb, pbox_dir / f"{nm}__{env_tag}.csv")
    elapsed = time.perf_counter() - t0
    report = {
        "stage": stage["name"],
        "fixed_values": fixed_values,
        "map": map_values,
        "posterior_mean": {nm: float(v) for nm, v in
                           zip(names, posterior.mean())},
        "posterior_std": {nm: float(v) for nm, v in
                          zip(names, posterior.std())},
        "correlations": corr.tolist(),
        "betas": [float(b) for b in posterior.betas],
        "acceptance_rates": [float(a) for a in posterior.acceptance_rates],
        "log_evidence": float(posterior.log_evidence),
        "counters": posterior.counters,
        "elapsed_seconds": elapsed,
        "pbox_area": {nm: envelope_area(
            pbox_from_posterior(posterior.samples[:, j], float(cov[j])))
            for j, nm in enumerate(names)},
    }
    with open(stage_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return StageResult(stage["name"], posterior, map_values, corr, data,
                       elapsed, cached=False)


def _stage_key(stage: dict, fixed_values: dict) -> str:
    blob = json.dumps({"stage": stage, "fixed": fixed_values},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_cached_stage(stage: dict, stage_dir: Path) -> StageResult:
    from .inference import TmcmcSettings as _TS

    with open(stage_dir / "map.json", "r", encoding="utf-8") as fh:
        map_values = json.load(fh)
    with open(stage_dir / "posterior.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    raw = np.loadtxt(stage_dir / "samples.csv", delimiter=",", skiprows=1,
                     ndmin=2)
    p = len(sidecar["param_names"])
    posterior = PosteriorResult(
        samples=raw[:, :p],
        log_likelihoods=raw[:, p],
        log_posteriors=raw[:, p + 1],
        betas=sidecar["betas"],
        acceptance_rates=sidecar["acceptance_rates"],
        log_evidence=sidecar["log_evidence"],
        param_names=tuple(sidecar["param_names"]),
        settings=_TS(**sidecar["settings"]),
        counters=sidecar.get("counters", {}),
    )
    data = read_dataset(stage_dir / "dataset.csv") \
        if (stage_dir / "dataset.csv").exists() else None
    return StageResult(stage["name"], posterior, map_values,
                       correlations(posterior), data, 0.0, cached=True)


def run_plan(plan: StagePlan, out_dir, threads: int = 1) -> PlanResult:
    """Execute all stages in dependency order with content-addressed caching.

    A failing stage halts its dependents; independent branches continue.
    Partial results stay on disk. Returns the per-stage results plus the
    assembled full-model parameters (only when every stage succeeded).
    """
    run_dir = Path(out_dir) / "runs" / plan.plan_hash()
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "plan.json", "w", encoding="utf-8") as fh:
        json.dump(plan.doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    results: dict = {}
    map_values: dict = {}
    failed: dict = {}
    for name in plan.order:
        stage = plan.stages[name]
        deps = plan._dependencies(stage)
        if any(d in failed for d in deps):
            failed[name] = "upstream stage failed"
            continue
        try:
            fixed_values = _resolve_fixed(stage, map_values)
            key = _stage_key(stage, fixed_values)
            stage_dir = run_dir / name
            key_file = stage_dir / "stage_key.json"
            if key_file.exists():
                with open(key_file, "r", encoding="utf-8") as fh:
                    if json.load(fh).get("key") == key:
                        res = _load_cached_stage(stage, stage_dir)
                        results[name] = res
                        map_values[name] = res.map_values
                        continue
            res = _run_stage(stage, fixed_values, stage_dir, threads)
            with open(key_file, "w", encoding="utf-8") as fh:
                json.dump({"key": key}, fh)
                fh.write("\n")
            results[name] = res
            map_values[name] = res.map_values
        except BiofilmcalError as exc:
            failed[name] = str(exc)

    assembled = None
    sources: dict = {}
    if not failed:
        assembled, sources = _assemble(plan, map_values)
        with open(run_dir / "assembled.json", "w", encoding="utf-8") as fh:
            json.dump({
                "a": assembled.a.tolist(),
                "b": assembled.b.tolist(),
                "eta": assembled.eta.tolist(),
                "eta_empty": assembled.eta_empty,
                "sources": sources,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return PlanResult(run_dir, results, assembled, sources, failed)


def _assemble(plan: StagePlan, map_values: dict):
    """Full A and B from stage MAPs and plan literals."""
    n = plan.n_species
    model = plan.doc.get("model") or {}
    a = np.zeros((n, n))
    b = np.zeros(n)
    sources: dict = {}
    literal = {}
    for st in plan.stages.values():
        for nm, source in (st.get("fixed") or {}).items():
            if "literal" in source:
                literal[nm] = float(source["literal"])
    for nm in ParamSet.full(n).names():
        entry = parse_param_name(nm)
        value = None
        for st_name, st in plan.stages.items():
            if nm in st["free"]:
                value = map_values[st_name][nm]
                sources[nm] = {"stage": st_name}
                break
        if value is None:
            value = literal[nm]
            sources[nm] = {"literal": value}
        if entry[0] == "a":
            a[entry[1], entry[2]] = value
            a[entry[2], entry[1]] = value
        else:
            b[entry[1]] = value
    params = MaterialParams(
        a=a, b=b,
        eta=np.asarray(model.get("eta", np.ones(n)), dtype=float),
        eta_empty=float(model.get("eta_empty", 1.0)))
    return params, sources


# ---------------------------------------------------------------------------
# Validation


def validate_plan(plan: StagePlan, out_dir, threads: int = 1) -> dict:
    """Validation run on a changed environment, no recalibration.

    Simulates the assembled model under the validation environment,
    checks that the pre-switch segment is bit-identical to the base
    stage's trajectory, generates the validation dataset from the true
    parameters, and scores it against posterior-predictive moments
    (epistemic spread over thinned final-stage samples plus aleatory
    variance from the surrogate, combined by the law of total variance).
    """
    val = plan.doc.get("validation")
    if val is None:
        raise ConfigError("plan has no validation section",
                          json_path="validation")
    run_dir = Path(out_dir) / "runs" / plan.plan_hash()
    assembled_file = run_dir / "assembled.json"
    if not assembled_file.exists():
        raise BiofilmcalError(
            f"plan has not been run (missing {assembled_file}); "
            f"run-plan must complete first")
    with open(assembled_file, "r", encoding="utf-8") as fh:
        asm = json.load(fh)
    assembled = MaterialParams(np.asarray(asm["a"]), np.asarray(asm["b"]),
                               np.asarray(asm["eta"]), asm["eta_empty"])

    base_stage = plan.stages[val["base_stage"]]
    base_dir = run_dir / val["base_stage"]
    base_res = _load_cached_stage(base_stage, base_dir)
    species = sorted(base_stage["species"])
    if species != list(range(1, plan.n_species + 1)):
        raise ConfigError("validation base stage must cover all species",
                          json_path="validation.base_stage")

    model = base_stage["model"]
    val_env = Environment(
        Schedule.from_json(val["env"]["c_star"]),
        Schedule.from_json(val["env"]["alpha_star"]),
        float(model.get("k_p", 1e-4)))
    val_sim = val["sim"]
    val_config = SimConfig(
        n_species=plan.n_species,
        n_steps=val_sim["n_steps"], dt=val_sim["dt"],
        initial_state=initial_state(model["initial_phi"],
                                    model.get("initial_psi", 0.999)),
        newton_tol=val_sim.get("newton_tol", 1e-10),
        newton_max_iter=val_sim.get("newton_max_iter", 50))

    # deterministic prediction at the assembled parameters
    traj_val = simulate(val_config, assembled, val_env)

    # pre-switch identity with the base stage run at the same parameters
    fixed_values = _resolve_fixed_from_run(base_stage, run_dir)
    _, base_config, base_params_fixed, base_env, base_entries, base_cov = \
        _stage_problem(base_stage, fixed_values)
    theta_map_base = np.asarray([base_res.map_values[nm]
                                 for nm in base_stage["free"]])
    base_params_at_map = base_entries.apply(base_params_fixed, theta_map_base)
    traj_base = simulate(base_config, base_params_at_map, base_env)
    n_prefix = min(len(traj_base), len(traj_val))
    prefix_identical = bool(
        base_config.dt == val_config.dt
        and np.array_equal(traj_val.raw[:n_prefix], traj_base.raw[:n_prefix]))

    # validation dataset from the true parameters
    data_cfg = val["data"]
    entries = base_entries
    true_fixed = data_cfg.get("true_fixed") or {}
    gen_params = assembled
    if true_fixed:
        names = [_to_local_name(nm, species, "validation")
                 for nm in true_fixed]
        gen_entries = ParamSet.from_names(names)
        gen_params = gen_entries.apply(
            assembled, np.asarray([true_fixed[nm] for nm in true_fixed]))
    spec = GenSpec(
        theta_star=np.asarray(data_cfg["theta_star"], dtype=float),
        cov=base_cov,
        time_indices=np.asarray(data_cfg["time_indices"], dtype=int),
        seed=int(data_cfg["seed"]),
        backend=data_cfg.get("backend", "full-model"),
        entries=entries)
    data = generate_dataset(val_config, gen_params, val_env, spec)

    # posterior-predictive moments from thinned final-stage samples
    n_pred = int(val.get("predictive_samples", 128))
    samples = base_res.posterior.samples
    stride = max(1, samples.shape[0] // n_pred)
    thinned = samples[::stride][:n_pred]
    idx = spec.time_indices
    means = np.empty((thinned.shape[0], idx.size, plan.n_species))
    varis = np.empty_like(means)
    for s, theta_s in enumerate(thinned):
        params_s = entries.apply(assembled, theta_s)
        uncertain = UncertainInput(theta_s, base_cov, entries)
        rom = build_rom(val_config, params_s, val_env, uncertain)
        ms = moments_at(rom, uncertain, idx, method="analytic")
        means[s] = ms.mean
        varis[s] = ms.var
    mean_pred = means.mean(axis=0)
    var_pred = varis.mean(axis=0) + means.var(axis=0)
    sigma_pred = np.sqrt(np.maximum(var_pred, 1e-30))

    values = data.value_matrix()
    z = (values - mean_pred) / sigma_pred
    within3 = float(np.mean(np.abs(z) <= 3.0))

    val_dir = run_dir / "validation"
    val_dir.mkdir(exist_ok=True)
    write_dataset(data, val_dir / "dataset.csv")
    traj_val.write_csv(val_dir / "trajectory.csv")
    with open(val_dir / "predicted.csv", "w", encoding="utf-8") as fh:
        fh.write("k,species,observed,predicted_mean,predicted_sigma,z\n")
        for r, k in enumerate(idx):
            for sp in range(plan.n_species):
                fh.write(f"{k},{sp + 1},{values[r, sp]:.17g},"
                         f"{mean_pred[r, sp]:.17g},{sigma_pred[r, sp]:.17g},"
                         f"{z[r, sp]:.17g}\n")
    report = {
        "prefix_identical": prefix_identical,
        "fraction_within_3_sigma": within3,
        "max_abs_z": float(np.max(np.abs(z))),
        "n_points": int(values.size),
        "n_predictive_samples": int(thinned.shape[0]),
    }
    with open(val_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def _resolve_fixed_from_run(stage: dict, run_dir: Path) -> dict:
    """Fixed values for a stage, pulling MAP sources from a completed run
    directory's saved map.json files."""
    out = {}
    cache: dict = {}
    for nm, source in (stage.get("fixed") or {}).items():
        if "literal" in source:
            out[nm] = float(source["literal"])
            continue
        st = source["stage"]
        if st not in cache:
            map_file = run_dir / st / "map.json"
            if not map_file.exists():
                raise BiofilmcalError(f"missing MAP file for stage {st}; "
                                      f"run-plan must complete first")
            with open(map_file, "r", encoding="utf-8") as fh:
                cache[st] = json.load(fh)
        out[nm] = float(cache[st][source["param"]])
    return out
