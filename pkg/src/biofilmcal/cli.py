"""Command-line front end.

Subcommands: ``simulate``, ``generate-data``, ``build-rom``, ``rom-error``,
``calibrate``, ``run-plan``, ``validate``. Every run writes a
machine-readable ``summary.json`` (timings, counters, versions) into the
output directory. Exit codes: 0 success, 2 configuration error (message
names the JSON path), 3 numerical failure (message names the stage or time
index), 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import (build_genspec, build_prior, build_problem,
                     build_tmcmc_settings, likelihood_options, load_config)
from .dataset import generate_dataset, read_dataset, write_dataset
from .errors import (BiofilmcalError, ConfigError, DatasetFormatError,
                     DegenerateVariance, DomainEscape, DomainError,
                     NonConvergence, SingularCovariance, StageStall)
from .inference import (LogPosterior, correlations, map_estimate,
                        save_posterior, tmcmc)
from .model import ParamSet
from .pbox import pbox_from_posterior, write_pbox_csv
from .pipeline import load_plan, run_plan, validate_plan
from .rom import UncertainInput, build_rom, rom_error, save_rom
from .solver import simulate

_NUMERICAL_ERRORS = (NonConvergence, DomainEscape, DomainError, StageStall,
                     SingularCovariance, DegenerateVariance)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biofilmcal",
        description="Calibration of multi-species biofilm growth models "
                    "under hybrid uncertainty.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="path to the JSON configuration document")
        p.add_argument("--out", default="out",
                       help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's RNG seeds")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent evaluations "
                            "(results are identical for any thread count)")

    common(sub.add_parser("simulate",
                          help="run the deterministic forward model and "
                               "export the trajectory CSV"))
    common(sub.add_parser("generate-data",
                          help="generate a synthetic dataset per the "
                               "config's data section"))
    common(sub.add_parser("build-rom",
                          help="build the sensitivity surrogate and save it"))
    p = sub.add_parser("rom-error",
                       help="Monte Carlo surrogate accuracy versus full "
                            "model solves")
    common(p)
    p.add_argument("--cov", type=float, default=None,
                   help="override the aleatory CoV (scalar)")
    p.add_argument("--samples", type=int, default=1000,
                   help="number of parameter draws (default 1000)")
    common(sub.add_parser("calibrate",
                          help="full Bayesian calibration: dataset, "
                               "transitional MCMC, MAP, correlations, "
                               "p-boxes"))
    common(sub.add_parser("run-plan",
                          help="execute a staged calibration plan"))
    common(sub.add_parser("validate",
                          help="validation run of a completed plan under "
                               "its validation environment"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "command": args.command,
        "version": __version__,
        "backend": kernels.BACKEND_NAME,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "seed": args.seed,
        "threads": args.threads,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": [],
        "counters": {},
    }
    t0 = time.perf_counter()
    code = 0
    try:
        handler = _COMMANDS[args.command]
        handler(args, out_dir, summary)
    except (ConfigError, DatasetFormatError) as exc:
        summary["error"] = str(exc)
        print(f"configuration error: {exc}", file=sys.stderr)
        code = 2
    except _NUMERICAL_ERRORS as exc:
        summary["error"] = str(exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = 3
    except BiofilmcalError as exc:
        summary["error"] = str(exc)
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    summary["elapsed_seconds"] = time.perf_counter() - t0
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def _cmd_simulate(args, out_dir: Path, summary: dict) -> None:
    doc = load_config(args.config)
    prob = build_problem(doc)
    traj = simulate(prob.config, prob.params, prob.env)
    path = out_dir / "trajectory.csv"
    traj.write_csv(path)
    summary["outputs"].append(path.name)
    summary["counters"] = {
        "n_steps": prob.config.n_steps,
        "rows": len(traj),
        "max_constraint_residual": float(
            np.max(np.abs(traj.constraint_residuals()))),
    }


def _cmd_generate_data(args, out_dir: Path, summary: dict) -> None:
    doc = load_config(args.config)
    prob = build_problem(doc)
    spec = build_genspec(doc, prob.entries, seed_override=args.seed)
    data = generate_dataset(prob.config, prob.params, prob.env, spec)
    path = out_dir / "dataset.csv"
    write_dataset(data, path)
    summary["outputs"].append(path.name)
    summary["counters"] = {
        "points": len(data),
        "m": data.m,
        "n_redrawn": data.provenance.get("n_redrawn", 0),
    }


def _cmd_build_rom(args, out_dir: Path, summary: dict) -> None:
    doc = load_config(args.config)
    prob = build_problem(doc)
    uncertain = UncertainInput(prob.theta0, prob.cov, prob.entries)
    t0 = time.perf_counter()
    rom = build_rom(prob.config, prob.params, prob.env, uncertain)
    build_seconds = time.perf_counter() - t0
    path = out_dir / "rom.npz"
    save_rom(rom, path)
    summary["outputs"].append(path.name)
    summary["counters"] = {
        "p": rom.p,
        "trajectory_solves": rom.p + 1,
        "build_seconds": build_seconds,
    }


def _cmd_rom_error(args, out_dir: Path, summary: dict) -> None:
    doc = load_config(args.config)
    prob = build_problem(doc)
    cov = prob.cov if args.cov is None else np.full(len(prob.entries), args.cov)
    uncertain = UncertainInput(prob.theta0, cov, prob.entries)
    rom = build_rom(prob.config, prob.params, prob.env, uncertain)
    seed = 0 if args.seed is None else args.seed
    result = rom_error(rom, prob.config, prob.params, prob.env, uncertain,
                       n_samples=args.samples, seed=seed,
                       threads=args.threads)
    path = out_dir / "rom_error.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,error\n")
        for k, e in enumerate(result.per_step):
            fh.write(f"{k},{e:.17g}\n")
    summary["outputs"].append(path.name)
    summary["counters"] = {
        "total_error": result.total,
        "max_error": result.max,
        "n_samples": result.n_samples,
        "n_failed": result.n_failed,
        "seed": seed,
    }


def _cmd_calibrate(args, out_dir: Path, summary: dict) -> None:
    doc = load_config(args.config)
    prob = build_problem(doc)
    data_cfg = doc.get("data") or {}
    if "path" in data_cfg:
        data = read_dataset(data_cfg["path"])
    else:
        spec = build_genspec(doc, prob.entries, seed_override=args.seed)
        data = generate_dataset(prob.config, prob.params, prob.env, spec)
    data_path = out_dir / "dataset.csv"
    write_dataset(data, data_path)
    summary["outputs"].append(data_path.name)

    prior = build_prior(doc, prob.entries)
    settings = build_tmcmc_settings(doc, seed_override=args.seed)
    log_post = LogPosterior(prior, prob.config, prob.params, prob.env,
                            prob.entries, prob.cov, data,
                            **likelihood_options(doc))
    posterior = tmcmc(log_post.log_likelihood, prior, settings,
                      threads=args.threads)
    posterior.counters = dict(log_post.counters)

    save_posterior(posterior, out_dir / "posterior.csv",
                   out_dir / "posterior.json")
    summary["outputs"] += ["posterior.csv", "posterior.json"]
    theta_map = map_estimate(posterior)
    with open(out_dir / "map.json", "w", encoding="utf-8") as fh:
        json.dump({nm: float(v) for nm, v in
                   zip(posterior.param_names, theta_map)}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    summary["outputs"].append("map.json")
    corr = correlations(posterior)
    with open(out_dir / "correlations.json", "w", encoding="utf-8") as fh:
        json.dump({"param_names": list(posterior.param_names),
                   "pearson": corr.tolist()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary["outputs"].append("correlations.json")
    pbox_dir = out_dir / "pbox"
    pbox_dir.mkdir(exist_ok=True)
    for j, nm in enumerate(posterior.param_names):
        for env_tag in ("all", "credible95"):
            pb = pbox_from_posterior(posterior.samples[:, j],
                                     float(prob.cov[j]), envelope=env_tag)
            fname = f"{nm}__{env_tag}.csv"
            write_pbox_csv(pb, pbox_dir / fname)
            summary["outputs"].append(f"pbox/{fname}")
    summary["counters"] = {
        **posterior.counters,
        "n_posterior_samples": int(posterior.samples.shape[0]),
        "n_tempering_stages": posterior.n_stages,
        "betas": [float(b) for b in posterior.betas],
        "acceptance_rates": [float(a) for a in posterior.acceptance_rates],
        "log_evidence": float(posterior.log_evidence),
    }


def _cmd_run_plan(args, out_dir: Path, summary: dict) -> None:
    plan = load_plan(args.config)
    result = run_plan(plan, out_dir, threads=args.threads)
    summary["counters"] = {
        "plan": plan.name,
        "run_dir": str(result.run_dir),
        "stages": {nm: {"cached": res.cached,
                        "elapsed_seconds": res.elapsed,
                        "map": res.map_values}
                   for nm, res in result.stages.items()},
        "failed": result.failed,
    }
    summary["outputs"].append(str(result.run_dir))
    if result.failed:
        first = next(iter(result.failed.items()))
        raise NonConvergence(f"stage {first[0]} failed: {first[1]}")


def _cmd_validate(args, out_dir: Path, summary: dict) -> None:
    plan = load_plan(args.config)
    report = validate_plan(plan, out_dir, threads=args.threads)
    summary["counters"] = report
    summary["outputs"].append(
        str(Path(out_dir) / "runs" / plan.plan_hash() / "validation"))


_COMMANDS = {
    "simulate": _cmd_simulate,
    "generate-data": _cmd_generate_data,
    "build-rom": _cmd_build_rom,
    "rom-error": _cmd_rom_error,
    "calibrate": _cmd_calibrate,
    "run-plan": _cmd_run_plan,
    "validate": _cmd_validate,
}


if __name__ == "__main__":
    sys.exit(main())
