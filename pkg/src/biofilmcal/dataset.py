"""Synthetic observation datasets and their file format.

The in-silico protocol mirrors wet-lab practice: every observation time is
its own terminated experiment. For each observation step a fresh parameter
realization is drawn around the true means, one forward simulation is run,
and the living volume fractions of all species at that step become data
points (shared realization per termination time). No extra measurement
noise is added on top of the aleatory parameter scatter.

File format (CSV): comment header lines
``# schema=1``, ``# n=.. m=.. dt=.. seed=.. rng=pcg64 backend=..``,
``# entries=..``, ``# theta_star=..``, ``# cov=..``, ``# time_indices=..``
followed by ``k,t,species,phibar`` rows (species 1-based, 17 significant
digits). The RNG is numpy's PCG64, fixed in the header for cross-platform
reproducibility.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, DimensionError, DomainEscape, NonConvergence
from .model import (GAMMA_IN_PSI_DEFAULT, Environment, MaterialParams,
                    ParamSet, SimConfig)
from .rom import UncertainInput, build_rom, evaluate
from .solver import simulate

__all__ = ["Dataset", "GenSpec", "generate_dataset", "write_dataset",
           "read_dataset"]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Observed points ``(k, species, phibar)`` plus provenance.

    ``species`` is 0-based in memory (1-based in files). ``realizations``
    holds the per-time parameter draws when generated in-process (kept out
    of the file; tests use it to check the shared-realization protocol).
    """

    points: tuple
    n_species: int
    time_indices: np.ndarray
    dt: float | None = None
    provenance: dict = field(default_factory=dict)
    realizations: np.ndarray | None = None

    def __post_init__(self):
        seen = set()
        for k, sp, val in self.points:
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"observed value {val} outside [0, 1]")
            if not 0 <= sp < self.n_species:
                raise DimensionError(f"species index {sp} out of range")
            if (k, sp) in seen:
                raise ValueError(f"duplicate point for (k={k}, species={sp})")
            seen.add((k, sp))

    @property
    def m(self) -> int:
        return self.time_indices.size

    def __len__(self) -> int:
        return len(self.points)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(step indices, species indices, values) as parallel arrays."""
        if not self.points:
            return (np.empty(0, dtype=int), np.empty(0, dtype=int),
                    np.empty(0))
        k, sp, val = zip(*self.points)
        return np.asarray(k, dtype=int), np.asarray(sp, dtype=int), np.asarray(val)

    def value_matrix(self) -> np.ndarray:
        """(m, n) matrix of values ordered by ``time_indices``; requires the
        complete one-point-per-(k, species) protocol."""
        k, sp, val = self.arrays()
        pos = {int(ki): r for r, ki in enumerate(self.time_indices)}
        out = np.full((self.m, self.n_species), np.nan)
        for ki, si, vi in zip(k, sp, val):
            out[pos[int(ki)], si] = vi
        if np.any(np.isnan(out)):
            raise ValueError("dataset is missing (k, species) combinations")
        return out


@dataclass(frozen=True)
class GenSpec:
    """Generation recipe: true parameter means, aleatory CoV, observation
    steps, seed and backend (``full-model`` or ``surrogate``)."""

    theta_star: np.ndarray
    cov: np.ndarray | float
    time_indices: np.ndarray
    seed: int
    backend: str = "full-model"
    entries: ParamSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta_star",
                           np.asarray(self.theta_star, dtype=float))
        idx = np.asarray(self.time_indices, dtype=int)
        if idx.size < 1:
            raise ValueError("need at least one observation time")
        if idx[0] <= 0:
            raise ValueError("first observation index must be > 0 "
                             "(the initial condition is known)")
        if np.unique(idx).size != idx.size:
            raise ValueError("observation indices must be distinct")
        object.__setattr__(self, "time_indices", np.sort(idx))
        if self.backend not in ("full-model", "surrogate"):
            raise ValueError("backend must be 'full-model' or 'surrogate'")


def generate_dataset(config: SimConfig, base_params: MaterialParams,
                     env: Environment, spec: GenSpec,
                     gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT) -> Dataset:
    """Generate one dataset per the terminated-experiments protocol.

    Deterministic under ``spec.seed``. Forward failures at drawn
    parameters are redrawn, at most 10 times per observation time.
    """
    entries = spec.entries or ParamSet.full(config.n_species)
    if spec.theta_star.shape != (len(entries),):
        raise DimensionError("theta_star length does not match free entries")
    if np.any(spec.time_indices > config.n_steps):
        raise ValueError("observation index beyond the simulated horizon")
    uncertain = UncertainInput(spec.theta_star, spec.cov, entries)
    params_star = entries.apply(base_params, spec.theta_star)
    rng = np.random.default_rng(spec.seed)

    rom = None
    if spec.backend == "surrogate":
        rom = build_rom(config, params_star, env, uncertain,
                        gamma_in_psi=gamma_in_psi)

    points = []
    draws = np.empty((spec.time_indices.size, len(entries)))
    n_redrawn = 0
    for row, k in enumerate(spec.time_indices):
        for attempt in range(11):
            tt, _ = draw_one(rng, uncertain)
            try:
                if rom is not None:
                    phibar_k = evaluate(rom, tt)[k]
                else:
                    theta = spec.theta_star + tt
                    traj = simulate(config, entries.apply(base_params, theta),
                                    env, gamma_in_psi=gamma_in_psi)
                    phibar_k = traj.phi_bar[k]
                break
            except (NonConvergence, DomainEscape):
                n_redrawn += 1
                continue
        else:
            raise NonConvergence(
                f"10 redraws failed for observation step {k}", step_index=int(k))
        draws[row] = spec.theta_star + tt
        for sp in range(config.n_species):
            points.append((int(k), sp, float(phibar_k[sp])))

    provenance = {
        "seed": int(spec.seed),
        "rng": "pcg64",
        "backend": spec.backend,
        "theta_star": [float(v) for v in spec.theta_star],
        "cov": [float(v) for v in uncertain.cov],
        "entries": entries.names(),
        "n_redrawn": n_redrawn,
    }
    return Dataset(tuple(points), config.n_species, spec.time_indices,
                   dt=config.dt, provenance=provenance, realizations=draws)


def draw_one(rng: np.random.Generator, uncertain: UncertainInput):
    """One perturbation row with positivity resampling."""
    n_resampled = 0
    while True:
        tt = rng.standard_normal(uncertain.p) * uncertain.std
        if np.all(uncertain.theta0 + tt > 0.0):
            return tt, n_resampled
        n_resampled += 1


def write_dataset(dataset: Dataset, path) -> None:
    """Write the CSV representation (lossless at 17 significant digits)."""
    prov = dataset.provenance
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        fh.write(f"# n={dataset.n_species} m={dataset.m}"
                 f" dt={'' if dataset.dt is None else format(dataset.dt, '.17g')}"
                 f" seed={prov.get('seed', '')}"
                 f" rng={prov.get('rng', 'pcg64')}"
                 f" backend={prov.get('backend', '')}\n")
        if prov.get("entries"):
            fh.write(f"# entries={','.join(prov['entries'])}\n")
        if prov.get("theta_star") is not None:
            fh.write("# theta_star="
                     + ",".join(f"{v:.17g}" for v in prov["theta_star"]) + "\n")
        if prov.get("cov") is not None:
            fh.write("# cov=" + ",".join(f"{v:.17g}" for v in prov["cov"]) + "\n")
        fh.write("# time_indices="
                 + ",".join(str(int(k)) for k in dataset.time_indices) + "\n")
        fh.write("k,t,species,phibar\n")
        dt = dataset.dt if dataset.dt is not None else float("nan")
        for k, sp, val in dataset.points:
            fh.write(f"{k},{k * dt:.17g},{sp + 1},{val:.17g}\n")


def read_dataset(path) -> Dataset:
    """Parse a dataset CSV; raises :class:`DatasetFormatError` with line
    numbers on malformed content or a schema-version mismatch."""
    points = []
    meta: dict = {}
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                _parse_comment(line[1:].strip(), meta, lineno)
                continue
            if not header_seen:
                if line != "k,t,species,phibar":
                    raise DatasetFormatError(
                        f"expected header 'k,t,species,phibar', got {line!r}",
                        line_number=lineno)
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DatasetFormatError(
                    f"expected 4 fields, got {len(parts)}", line_number=lineno)
            try:
                k = int(parts[0])
                sp = int(parts[2])
                val = float(parts[3])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line_number=lineno) from None
            if sp < 1:
                raise DatasetFormatError("species must be >= 1",
                                         line_number=lineno)
            points.append((k, sp - 1, val))
    if meta.get("schema") != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"unsupported schema version {meta.get('schema')!r} "
            f"(expected {SCHEMA_VERSION})")
    if "time_indices" in meta:
        time_indices = np.asarray(meta["time_indices"], dtype=int)
    else:
        time_indices = np.unique([k for k, _, _ in points])
    n = meta.get("n", 1 + max((sp for _, sp, _ in points), default=0))
    provenance = {key: meta[key] for key in
                  ("seed", "rng", "backend", "theta_star", "cov", "entries")
                  if key in meta}
    return Dataset(tuple(points), n, time_indices, dt=meta.get("dt"),
                   provenance=provenance)


def _parse_comment(text: str, meta: dict, lineno: int) -> None:
    for token in text.split():
        if "=" not in token:
            continue
        key, _, raw = token.partition("=")
        try:
            if key == "schema":
                meta["schema"] = int(raw)
            elif key in ("n", "m", "seed"):
                meta[key] = int(raw)
            elif key == "dt":
                if raw:
                    meta["dt"] = float(raw)
            elif key in ("rng", "backend"):
                meta[key] = raw
            elif key == "entries":
                meta[key] = raw.split(",")
            elif key in ("theta_star", "cov"):
                meta[key] = [float(v) for v in raw.split(",")]
            elif key == "time_indices":
                meta[key] = [int(v) for v in raw.split(",")]
        except ValueError as exc:
            raise DatasetFormatError(f"bad {key} value: {exc}",
                                     line_number=lineno) from None
