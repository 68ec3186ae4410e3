"""Reduced-order surrogate: base trajectory plus first-order parameter
sensitivities, evaluation, output moments and accuracy diagnostics.

The surrogate expands the trajectory linearly in the zero-mean aleatory
perturbation ``theta_tilde`` around the parameter means: one base solve
plus one staggered sensitivity solve per uncertain parameter (``p + 1``
trajectory solves total). Evaluating the surrogate at a perturbation is a
handful of multiply-adds per step; the living volume fraction
``phibar = phi * psi`` is quadratic in the perturbation, which gives
closed-form output moments for Gaussian inputs.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (BiofilmcalError, ConfigError, DimensionError,
                     DomainEscape, NonConvergence)
from .model import (GAMMA_IN_PSI_DEFAULT, Environment, MaterialParams,
                    ParamSet, Schedule, SimConfig, State, Trajectory,
                    initial_state)
from .solver import _raise_for_status, simulate

__all__ = [
    "UncertainInput",
    "RomCoefficients",
    "MomentSeries",
    "RomErrorResult",
    "build_rom",
    "evaluate",
    "evaluate_batch",
    "moments",
    "moments_at",
    "moments_full_at",
    "rom_error",
    "draw_perturbations",
    "save_rom",
    "load_rom",
]

ROM_FORMAT_VERSION = 1


@dataclass(frozen=True)
class UncertainInput:
    """Aleatory model of the free parameters.

    Each free entry j is Gaussian with mean ``theta0[j]`` and standard
    deviation ``cov[j] * theta0[j]``, independent across entries. Draws
    that would push a physical parameter to <= 0 are resampled (counted
    by the consumers); irrelevant at the CoV levels used here.
    """

    theta0: np.ndarray
    cov: np.ndarray
    entries: ParamSet

    def __post_init__(self):
        theta0 = np.asarray(self.theta0, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = np.full(theta0.size, float(cov))
        p = len(self.entries)
        if theta0.shape != (p,) or cov.shape != (p,):
            raise DimensionError(
                f"theta0/cov must have length {p} (one per free entry)")
        if np.any(theta0 <= 0.0):
            raise ValueError("theta0 entries must be > 0 (CoV-based std)")
        if np.any(cov < 0.0):
            raise ValueError("cov entries must be >= 0")
        theta0.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_params(cls, params: MaterialParams, cov,
                    entries: ParamSet | None = None) -> "UncertainInput":
        entries = entries or ParamSet.full(params.n)
        return cls(entries.extract(params), cov, entries)

    @property
    def p(self) -> int:
        return len(self.entries)

    @property
    def std(self) -> np.ndarray:
        return self.cov * self.theta0


class RomCoefficients:
    """Base trajectory plus one sensitivity trajectory per free parameter.

    ``first`` has shape ``(p, N+1, 2n+2)`` in the state-vector layout;
    ``phi_first``/``psi_first`` expose the species blocks.
    """

    def __init__(self, zeroth: Trajectory, first: np.ndarray,
                 uncertain: UncertainInput, config: SimConfig,
                 params: MaterialParams, env: Environment,
                 gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT):
        p = uncertain.p
        if first.shape != (p, len(zeroth), 2 * zeroth.n_species + 2):
            raise DimensionError("sensitivity array shape mismatch")
        self.zeroth = zeroth
        self.first = first
        self.uncertain = uncertain
        self.config = config
        self.params = params
        self.env = env
        self.gamma_in_psi = gamma_in_psi

    @property
    def n_species(self) -> int:
        return self.zeroth.n_species

    @property
    def p(self) -> int:
        return self.uncertain.p

    @property
    def phi_first(self) -> np.ndarray:
        return self.first[:, :, : self.n_species]

    @property
    def psi_first(self) -> np.ndarray:
        return self.first[:, :, self.n_species: 2 * self.n_species]


def build_rom(config: SimConfig, params: MaterialParams, env: Environment,
              uncertain: UncertainInput,
              gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT,
              backend: str | None = None) -> RomCoefficients:
    """Build the surrogate at the parameter means.

    Per time step the base system is solved first (identical to the
    deterministic forward model), then the ``p`` linearized sensitivity
    systems, reusing the converged Jacobian factorization (staggered
    scheme). Sensitivity systems are linear after time discretization, so
    their Newton loop converges in one update (asserted inside the kernel,
    at most two iterations).
    """
    if params.n != config.n_species:
        raise DimensionError("params species count does not match config")
    theta_check = uncertain.entries.extract(params)
    if not np.array_equal(theta_check, uncertain.theta0):
        raise ValueError("uncertain.theta0 is inconsistent with params")
    kern = kernels.get_backend(backend)
    times = config.times()
    c_vals = env.c_star.at_many(times[1:])
    a_vals = env.alpha_star.at_many(times[1:])
    kinds, iis, jjs = uncertain.entries.kernel_codes()
    out = np.empty((config.n_steps + 1, 2 * config.n_species + 2))
    sens = np.empty((uncertain.p, config.n_steps + 1, 2 * config.n_species + 2))
    status, fail_step, res_norm, order, param_index, _ = kern.rom_loop(
        config.initial_state.as_vector(), config.n_species, config.dt,
        params.a, params.b, params.eta, params.eta_empty, env.k_p,
        c_vals, a_vals, config.newton_tol, config.newton_max_iter,
        1 if gamma_in_psi else 0, kinds, iis, jjs, out, sens)
    if status == 3:
        raise NonConvergence(
            f"sensitivity solve for parameter {param_index} did not converge "
            f"at time step {fail_step}", residual_norm=res_norm,
            step_index=fail_step, order=1, param_index=param_index)
    _raise_for_status(status, fail_step, res_norm, order=order,
                      param_index=param_index if order else None)
    zeroth = Trajectory(times, out, config.n_species)
    return RomCoefficients(zeroth, sens, uncertain, config, params, env,
                           gamma_in_psi)


def evaluate(rom: RomCoefficients, theta_tilde) -> np.ndarray:
    """Surrogate living volume fractions for one perturbation.

    Returns ``phibar`` with shape ``(N+1, n)``:
    ``(phi0 + theta.phi1) * (psi0 + theta.psi1)`` per species and step.
    With ``theta_tilde = 0`` this is bit-exactly the base trajectory's
    ``phi_bar``.
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.shape != (rom.p,):
        raise DimensionError(f"theta_tilde must have shape ({rom.p},)")
    phi = rom.zeroth.phi + np.tensordot(theta_tilde, rom.phi_first, axes=1)
    psi = rom.zeroth.psi + np.tensordot(theta_tilde, rom.psi_first, axes=1)
    return phi * psi


def evaluate_batch(rom: RomCoefficients, theta_tilde: np.ndarray) -> np.ndarray:
    """Vectorized :func:`evaluate` for a ``(B, p)`` batch; returns
    ``(B, N+1, n)``."""
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.ndim != 2 or theta_tilde.shape[1] != rom.p:
        raise DimensionError(f"theta_tilde must have shape (B, {rom.p})")
    phi = rom.zeroth.phi[None] + np.tensordot(theta_tilde, rom.phi_first, axes=1)
    psi = rom.zeroth.psi[None] + np.tensordot(theta_tilde, rom.psi_first, axes=1)
    return phi * psi


def draw_perturbations(rng: np.random.Generator, uncertain: UncertainInput,
                       n_draws: int) -> tuple[np.ndarray, int]:
    """Draw ``(n_draws, p)`` Gaussian perturbations; rows that would push
    any parameter to <= 0 are redrawn. Returns (draws, n_resampled)."""
    std = uncertain.std
    tt = rng.standard_normal((n_draws, uncertain.p)) * std
    n_resampled = 0
    bad = np.where(np.any(uncertain.theta0 + tt <= 0.0, axis=1))[0]
    while bad.size:
        n_resampled += bad.size
        tt[bad] = rng.standard_normal((bad.size, uncertain.p)) * std
        bad = bad[np.any(uncertain.theta0 + tt[bad] <= 0.0, axis=1)]
    return tt, n_resampled


@dataclass(frozen=True)
class MomentSeries:
    """Per-step mean and variance of the living volume fractions.

    ``mean`` and ``var`` have shape ``(N+1, n)`` (time-major). ``method``
    is ``"analytic"`` or ``"sampled"``; the analytic mean is the base
    trajectory's phibar, the analytic variance the closed form for the
    quadratic-in-Gaussian surrogate.
    """

    mean: np.ndarray
    var: np.ndarray
    method: str
    n_samples: int | None = None
    seed: int | None = None
    n_resampled: int = 0

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def moments(rom: RomCoefficients, uncertain: UncertainInput,
            method: str = "sampled", n_samples: int = 500,
            seed: int = 0) -> MomentSeries:
    """Output moments of the surrogate under the aleatory input model.

    ``analytic``: exact mean/variance of the quadratic surrogate under
    independent Gaussian perturbations (mean reported as the base phibar;
    see module notes). ``sampled``: Monte Carlo with ``n_samples`` draws,
    unbiased variance, seed-reproducible; converges to the analytic
    moments as ``n_samples`` grows.
    """
    if uncertain.p != rom.p:
        raise DimensionError("uncertain input size does not match the surrogate")
    if method == "analytic":
        mean, var = _analytic_moments(
            rom.zeroth.phi, rom.zeroth.psi, rom.phi_first, rom.psi_first,
            uncertain.std)
        return MomentSeries(mean, var, "analytic")
    if method != "sampled":
        raise ValueError("method must be 'analytic' or 'sampled'")
    if n_samples < 2:
        raise ValueError("sampled moments need n_samples >= 2")
    rng = np.random.default_rng(seed)
    tt, n_resampled = draw_perturbations(rng, uncertain, n_samples)
    mean, var = _sampled_moments(
        rom.zeroth.phi, rom.zeroth.psi, rom.phi_first, rom.psi_first, tt)
    return MomentSeries(mean, var, "sampled", n_samples, seed, n_resampled)


def moments_at(rom: RomCoefficients, uncertain: UncertainInput,
               step_indices: np.ndarray, method: str = "sampled",
               n_samples: int = 500, seed: int = 0) -> MomentSeries:
    """Moments restricted to a set of time-step indices (cheaper; identical
    values to slicing the full series at those steps)."""
    idx = np.asarray(step_indices, dtype=int)
    phi0 = rom.zeroth.phi[idx]
    psi0 = rom.zeroth.psi[idx]
    phi1 = rom.phi_first[:, idx, :]
    psi1 = rom.psi_first[:, idx, :]
    if method == "analytic":
        mean, var = _analytic_moments(phi0, psi0, phi1, psi1, uncertain.std)
        return MomentSeries(mean, var, "analytic")
    rng = np.random.default_rng(seed)
    tt, n_resampled = draw_perturbations(rng, uncertain, n_samples)
    mean, var = _sampled_moments(phi0, psi0, phi1, psi1, tt)
    return MomentSeries(mean, var, "sampled", n_samples, seed, n_resampled)


def _analytic_moments(phi0, psi0, phi1, psi1, std):
    s2 = (std ** 2)[:, None, None]
    lin = phi0[None] * psi1 + psi0[None] * phi1      # (p, T, n)
    u = np.sum(s2 * phi1 ** 2, axis=0)
    v = np.sum(s2 * psi1 ** 2, axis=0)
    w = np.sum(s2 * phi1 * psi1, axis=0)
    var = np.sum(s2 * lin ** 2, axis=0) + u * v + w ** 2
    return phi0 * psi0, np.maximum(var, 0.0)


def _sampled_moments(phi0, psi0, phi1, psi1, tt, chunk: int = 20_000):
    """Sample mean/variance of the surrogate phibar, accumulating
    deviations from the base phibar for numerical stability."""
    base = phi0 * psi0
    n_draws = tt.shape[0]
    s1 = np.zeros_like(base)
    s2 = np.zeros_like(base)
    for lo in range(0, n_draws, chunk):
        block = tt[lo: lo + chunk]
        phi = phi0[None] + np.tensordot(block, phi1, axes=1)
        psi = psi0[None] + np.tensordot(block, psi1, axes=1)
        d = phi * psi - base[None]
        s1 += d.sum(axis=0)
        s2 += (d * d).sum(axis=0)
    mean = base + s1 / n_draws
    var = (s2 - s1 ** 2 / n_draws) / (n_draws - 1)
    return mean, np.maximum(var, 0.0)


def moments_full_at(rom: RomCoefficients, uncertain: UncertainInput,
                    step_indices: np.ndarray, n_samples: int = 500,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sampled mean and full cross-species covariance at selected steps.

    Returns ``(means, covs)`` with shapes ``(m, n)`` and ``(m, n, n)``;
    used by the full-covariance likelihood comparison study.
    """
    idx = np.asarray(step_indices, dtype=int)
    rng = np.random.default_rng(seed)
    tt, _ = draw_perturbations(rng, uncertain, n_samples)
    phi = rom.zeroth.phi[idx][None] + np.tensordot(tt, rom.phi_first[:, idx, :], axes=1)
    psi = rom.zeroth.psi[idx][None] + np.tensordot(tt, rom.psi_first[:, idx, :], axes=1)
    vals = phi * psi                       # (S, m, n)
    means = vals.mean(axis=0)
    d = vals - means[None]
    covs = np.einsum("smi,smj->mij", d, d) / (tt.shape[0] - 1)
    return means, covs


@dataclass(frozen=True)
class RomErrorResult:
    """Surrogate-vs-full-model error diagnostics.

    ``per_step[k]`` is the Euclidean distance over species between the
    surrogate and full-model phibar, averaged over the aleatory draws;
    ``total`` its time average over steps 1..N; ``max`` the worst step.
    """

    per_step: np.ndarray
    total: float
    max: float
    n_samples: int
    n_failed: int
    seed: int


def rom_error(rom: RomCoefficients, config: SimConfig, params: MaterialParams,
              env: Environment, uncertain: UncertainInput, n_samples: int,
              seed: int = 0, threads: int = 1,
              gamma_in_psi: bool | None = None) -> RomErrorResult:
    """Monte Carlo accuracy check of the surrogate against full solves.

    Draws ``n_samples`` parameter perturbations, runs the full model and
    the surrogate for each, and aggregates per-step distances. Full-model
    failures are recorded and the draw skipped.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if gamma_in_psi is None:
        gamma_in_psi = rom.gamma_in_psi
    rng = np.random.default_rng(seed)
    tt, _ = draw_perturbations(rng, uncertain, n_samples)

    def one(idx: int):
        theta = uncertain.theta0 + tt[idx]
        params_i = uncertain.entries.apply(params, theta)
        try:
            traj = simulate(config, params_i, env, gamma_in_psi=gamma_in_psi)
        except (NonConvergence, DomainEscape):
            return None
        diff = evaluate(rom, tt[idx]) - traj.phi_bar
        return np.sqrt((diff ** 2).sum(axis=1))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_samples)))
    else:
        results = [one(i) for i in range(n_samples)]

    ok = [r for r in results if r is not None]
    n_failed = n_samples - len(ok)
    if not ok:
        raise BiofilmcalError("all full-model draws failed")
    per_step = np.sum(ok, axis=0) / len(ok)
    total = float(per_step[1:].mean())
    return RomErrorResult(per_step, total, float(per_step.max()),
                          n_samples, n_failed, seed)


# ---------------------------------------------------------------------------
# Serialization


def save_rom(rom: RomCoefficients, path) -> None:
    """Write the surrogate to a single version-tagged ``.npz`` file."""
    meta = {
        "format_version": ROM_FORMAT_VERSION,
        "n_species": rom.n_species,
        "n_steps": rom.config.n_steps,
        "dt": rom.config.dt,
        "newton_tol": rom.config.newton_tol,
        "newton_max_iter": rom.config.newton_max_iter,
        "entries": rom.uncertain.entries.names(),
        "gamma_in_psi": rom.gamma_in_psi,
        "k_p": rom.env.k_p,
        "eta_empty": rom.params.eta_empty,
    }
    np.savez(
        path,
        meta=json.dumps(meta),
        zeroth=rom.zeroth.raw,
        times=rom.zeroth.times,
        first=rom.first,
        theta0=rom.uncertain.theta0,
        cov=rom.uncertain.cov,
        a=rom.params.a,
        b=rom.params.b,
        eta=rom.params.eta,
        c_times=rom.env.c_star.times,
        c_values=rom.env.c_star.values,
        alpha_times=rom.env.alpha_star.times,
        alpha_values=rom.env.alpha_star.values,
        initial=rom.config.initial_state.as_vector(),
    )


def load_rom(path) -> RomCoefficients:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != ROM_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported surrogate file version {meta.get('format_version')!r}"
                f" (expected {ROM_FORMAT_VERSION})")
        n = int(meta["n_species"])
        params = MaterialParams(data["a"], data["b"], data["eta"],
                                float(meta["eta_empty"]))
        env = Environment(Schedule(data["c_times"], data["c_values"]),
                          Schedule(data["alpha_times"], data["alpha_values"]),
                          float(meta["k_p"]))
        config = SimConfig(
            n, int(meta["n_steps"]), float(meta["dt"]),
            State.from_vector(data["initial"], n),
            newton_tol=float(meta["newton_tol"]),
            newton_max_iter=int(meta["newton_max_iter"]))
        uncertain = UncertainInput(data["theta0"], data["cov"],
                                   ParamSet.from_names(meta["entries"]))
        zeroth = Trajectory(data["times"], data["zeroth"], n)
        return RomCoefficients(zeroth, data["first"], uncertain, config,
                               params, env, bool(meta["gamma_in_psi"]))
