"""Priors, moment-based Gaussian log-likelihoods, transitional MCMC and
posterior diagnostics.

The unnormalized posterior over the parameter means combines a uniform box
prior with a likelihood built from the surrogate's output mean and
variance at the observed (time step, species) points. One surrogate build
per posterior evaluation replaces the inner Monte-Carlo loop over aleatory
draws of the full model (the single-loop property; instrumented by
counters).
"""
from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .dataset import Dataset
from .errors import (DegenerateVariance, DimensionError, DomainEscape,
                     NonConvergence, SingularCovariance, StageStall)
from .model import (GAMMA_IN_PSI_DEFAULT, Environment, MaterialParams,
                    ParamSet, SimConfig)
from .rom import (MomentSeries, UncertainInput, _sampled_moments, build_rom,
                  moments_at, moments_full_at)

__all__ = [
    "PriorSpec",
    "TmcmcSettings",
    "PosteriorResult",
    "FullMoments",
    "log_likelihood_diag",
    "log_likelihood_full",
    "LogPosterior",
    "tmcmc",
    "map_estimate",
    "correlations",
    "save_posterior",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box prior; ``bounds[j] = (lo_j, hi_j)``."""

    bounds: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise DimensionError("bounds must have shape (p, 2)")
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("prior bounds must satisfy lo < hi")
        bounds.setflags(write=False)
        object.__setattr__(self, "bounds", bounds)
        if self.names and len(self.names) != bounds.shape[0]:
            raise DimensionError("names length does not match bounds")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def p(self) -> int:
        return self.bounds.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    def std(self) -> np.ndarray:
        """Per-parameter standard deviation of the uniform prior."""
        return self.widths / np.sqrt(12.0)

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta > self.bounds[:, 0])
                    and np.all(theta < self.bounds[:, 1]))

    def log_density(self, theta: np.ndarray) -> float:
        if not self.contains(theta):
            return -np.inf
        return -float(np.log(self.widths).sum())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, self.p))
        return self.bounds[:, 0] + u * self.widths


@dataclass(frozen=True)
class TmcmcSettings:
    """Transitional MCMC knobs (Ching–Chen defaults).

    ``n_mcmc_steps > 1`` adds extra Metropolis sweeps over the whole
    population after the resampling-mutation pass of each stage,
    decorrelating resampling duplicates at the cost of proportionally more
    likelihood evaluations.
    """

    n_samples_per_stage: int = 5000
    target_weight_cov: float = 1.0
    proposal_scale: float = 0.2
    max_stages: int = 50
    seed: int = 0
    n_mcmc_steps: int = 1

    def __post_init__(self):
        if self.n_samples_per_stage < 100:
            raise ValueError("n_samples_per_stage must be >= 100")
        if not 0.0 < self.proposal_scale <= 1.0:
            raise ValueError("proposal_scale must lie in (0, 1]")
        if self.target_weight_cov <= 0.0:
            raise ValueError("target_weight_cov must be > 0")
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")
        if self.n_mcmc_steps < 1:
            raise ValueError("n_mcmc_steps must be >= 1")


@dataclass
class PosteriorResult:
    """Final-stage samples plus sampler history and diagnostics.

    ``chain_ids`` records the resampling lead each final sample descends
    from; samples with distinct ids come from independent Metropolis
    chains, which gives an honest clustered standard error for posterior
    means.
    """

    samples: np.ndarray
    log_likelihoods: np.ndarray
    log_posteriors: np.ndarray
    betas: list
    acceptance_rates: list
    log_evidence: float
    param_names: tuple
    settings: TmcmcSettings
    chain_ids: np.ndarray | None = None
    counters: dict = field(default_factory=dict)

    def cluster_standard_error(self) -> np.ndarray:
        """Per-parameter standard error of the posterior mean, clustering
        samples by their final-stage chain ancestry."""
        if self.chain_ids is None:
            raise ValueError("no chain ancestry recorded")
        mu = self.samples.mean(axis=0)
        n = self.samples.shape[0]
        se2 = np.zeros(self.samples.shape[1])
        for cid in np.unique(self.chain_ids):
            rows = self.samples[self.chain_ids == cid]
            se2 += (rows.sum(axis=0) - rows.shape[0] * mu) ** 2
        return np.sqrt(se2) / n

    @property
    def n_stages(self) -> int:
        return len(self.betas) - 1

    def std(self) -> np.ndarray:
        return self.samples.std(axis=0, ddof=1)

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


# ---------------------------------------------------------------------------
# Likelihoods


def log_likelihood_diag(moments: MomentSeries, data: Dataset,
                        variance_floor: float = 1e-12,
                        form: str = "standard",
                        counters: dict | None = None) -> float:
    """Gaussian log-likelihood using per-point variances only.

    ``form="standard"`` uses the Gaussian log-density
    ``-1/2 log(2 pi s2) - 1/2 (d - mu)^2 / s2`` summed over points; the
    normalization matters because the variance depends on the parameters.
    ``form="paper-literal"`` doubles the normalization term (coefficient 1
    on the log), reproducing the published expression for comparison.

    Variances below ``variance_floor`` are floored and counted into
    ``counters["floor_hits"]`` (species saturating at phibar -> 0 would
    otherwise produce -inf spikes).
    """
    if form not in ("standard", "paper-literal"):
        raise ValueError("form must be 'standard' or 'paper-literal'")
    mu, s2 = _lookup_moments(moments, data)
    hits = int(np.count_nonzero(s2 < variance_floor))
    if hits and counters is not None:
        counters["floor_hits"] = counters.get("floor_hits", 0) + hits
    s2 = np.maximum(s2, variance_floor)
    _, _, values = data.arrays()
    norm_coeff = 0.5 if form == "standard" else 1.0
    out = np.sum(-norm_coeff * (LOG_2PI + np.log(s2))
                 - 0.5 * (values - mu) ** 2 / s2)
    return float(out)


def _lookup_moments(moments: MomentSeries, data: Dataset):
    """Per-point (mu, sigma^2) from a moment series.

    Accepts either a full series (rows = all time steps) or a restricted
    series whose rows follow ``data.time_indices``.
    """
    k, sp, _ = data.arrays()
    if moments.mean.shape[0] == data.m:
        row_of = {int(ki): r for r, ki in enumerate(data.time_indices)}
        rows = np.asarray([row_of[int(ki)] for ki in k])
    else:
        rows = k
    return moments.mean[rows, sp], moments.var[rows, sp]


@dataclass(frozen=True)
class FullMoments:
    """Sampled mean and cross-species covariance at the observed steps."""

    step_indices: np.ndarray
    mean: np.ndarray   # (m, n)
    cov: np.ndarray    # (m, n, n)


def log_likelihood_full(full: FullMoments, data: Dataset,
                        variance_floor: float = 1e-12) -> float:
    """Multivariate Gaussian log-likelihood with the per-step covariance.

    Diagonal entries are floored like the diagonal likelihood; a plain
    Cholesky is attempted first, then one regularization pass adding
    ``1e-10 * trace/n`` to the diagonal. Only used for the diagonal-vs-full
    comparison study.
    """
    values = data.value_matrix()
    order = np.argsort(data.time_indices)
    row_of = {int(ki): r for r, ki in enumerate(full.step_indices)}
    total = 0.0
    for mrow in order:
        k = int(data.time_indices[mrow])
        if k not in row_of:
            raise DimensionError(f"no moments available for step {k}")
        row = row_of[k]
        cov = full.cov[row].copy()
        n = cov.shape[0]
        dg = np.diag_indices(n)
        cov[dg] = np.maximum(cov[dg], variance_floor)
        r = values[mrow] - full.mean[row]
        try:
            cho = scipy.linalg.cho_factor(cov, lower=True)
        except scipy.linalg.LinAlgError:
            cov[dg] += 1e-10 * np.trace(cov) / n
            try:
                cho = scipy.linalg.cho_factor(cov, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise SingularCovariance(
                    f"covariance at step {k} stayed singular") from exc
        logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        quad = float(r @ scipy.linalg.cho_solve(cho, r))
        total += -0.5 * (n * LOG_2PI + logdet) - 0.5 * quad
    return float(total)


# ---------------------------------------------------------------------------
# Posterior evaluation


class LogPosterior:
    """Log posterior of the parameter means, single surrogate build per call.

    Outside the prior box the value is -inf with no model evaluation.
    Inside, a surrogate is built at the proposed means, output moments are
    computed at the observed steps (``moments_method`` "sampled" with
    common random numbers, or "analytic"), and the diagonal or
    full-covariance Gaussian likelihood is evaluated. Forward-solver
    failures map to -inf (implausible parameters) and are counted.

    Thread-safe; ``counters`` tracks rom_builds, likelihood_evals,
    forward_failures and floor_hits.
    """

    def __init__(self, prior: PriorSpec, config: SimConfig,
                 base_params: MaterialParams, env: Environment,
                 entries: ParamSet, cov, data: Dataset,
                 moments_method: str = "sampled",
                 n_moment_samples: int = 500, moments_seed: int = 0,
                 likelihood_form: str = "standard",
                 variance_floor: float = 1e-12,
                 covariance: str = "diag",
                 gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT,
                 backend: str | None = None):
        if covariance not in ("diag", "full"):
            raise ValueError("covariance must be 'diag' or 'full'")
        if moments_method not in ("sampled", "analytic"):
            raise ValueError("moments_method must be 'sampled' or 'analytic'")
        if covariance == "full" and moments_method != "sampled":
            raise ValueError("full-covariance likelihood requires sampled moments")
        self.prior = prior
        self.config = config
        self.base_params = base_params
        self.env = env
        self.entries = entries
        self.cov = np.asarray(cov, dtype=float)
        if self.cov.ndim == 0:
            self.cov = np.full(len(entries), float(cov))
        self.data = data
        self.k_indices = np.asarray(data.time_indices, dtype=int)
        self.moments_method = moments_method
        self.n_moment_samples = n_moment_samples
        self.moments_seed = moments_seed
        self.likelihood_form = likelihood_form
        self.variance_floor = variance_floor
        self.covariance = covariance
        self.gamma_in_psi = gamma_in_psi
        self.backend = backend
        self.counters = {"rom_builds": 0, "likelihood_evals": 0,
                         "forward_failures": 0, "floor_hits": 0}
        self._lock = threading.Lock()
        # Common random numbers: one standard-normal block per run, so the
        # likelihood is a deterministic function of theta. Rows are
        # sanitized once: theta*(1 + cov*z) > 0 iff 1 + cov*z > 0,
        # independent of theta.
        if moments_method == "sampled":
            rng = np.random.default_rng(moments_seed)
            z = rng.standard_normal((n_moment_samples, len(entries)))
            bad = np.where(np.any(1.0 + self.cov[None, :] * z <= 0.0, axis=1))[0]
            while bad.size:
                z[bad] = rng.standard_normal((bad.size, len(entries)))
                bad = bad[np.any(1.0 + self.cov[None, :] * z[bad] <= 0.0, axis=1)]
            self._z = z
        else:
            self._z = None

    def log_prior(self, theta) -> float:
        return self.prior.log_density(np.asarray(theta, dtype=float))

    def log_likelihood(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.prior.contains(theta) or np.any(theta <= 0.0):
            return -np.inf
        uncertain = UncertainInput(theta, self.cov, self.entries)
        params = self.entries.apply(self.base_params, theta)
        try:
            rom = build_rom(self.config, params, self.env, uncertain,
                            gamma_in_psi=self.gamma_in_psi,
                            backend=self.backend)
        except (NonConvergence, DomainEscape):
            with self._lock:
                self.counters["forward_failures"] += 1
            return -np.inf
        with self._lock:
            self.counters["rom_builds"] += 1
            self.counters["likelihood_evals"] += 1
        local_counters: dict = {}
        if self.covariance == "full":
            mean, cov = self._full_moments(rom, uncertain)
            value = log_likelihood_full(
                FullMoments(self.k_indices, mean, cov), self.data,
                variance_floor=self.variance_floor)
        else:
            ms = self._diag_moments(rom, uncertain)
            value = log_likelihood_diag(
                ms, self.data, variance_floor=self.variance_floor,
                form=self.likelihood_form, counters=local_counters)
        if local_counters.get("floor_hits"):
            with self._lock:
                self.counters["floor_hits"] += local_counters["floor_hits"]
        return value

    def __call__(self, theta, include_likelihood: bool = True) -> float:
        lp = self.log_prior(theta)
        if not include_likelihood or lp == -np.inf:
            return lp
        return lp + self.log_likelihood(theta)

    # moment helpers -------------------------------------------------------

    def _diag_moments(self, rom, uncertain: UncertainInput) -> MomentSeries:
        idx = self.k_indices
        if self.moments_method == "analytic":
            return moments_at(rom, uncertain, idx, method="analytic")
        tt = self._z * uncertain.std[None, :]
        mean, var = _sampled_moments(
            rom.zeroth.phi[idx], rom.zeroth.psi[idx],
            rom.phi_first[:, idx, :], rom.psi_first[:, idx, :], tt)
        return MomentSeries(mean, var, "sampled", self.n_moment_samples,
                            self.moments_seed)

    def _full_moments(self, rom, uncertain: UncertainInput):
        idx = self.k_indices
        tt = self._z * uncertain.std[None, :]
        phi = rom.zeroth.phi[idx][None] \
            + np.tensordot(tt, rom.phi_first[:, idx, :], axes=1)
        psi = rom.zeroth.psi[idx][None] \
            + np.tensordot(tt, rom.psi_first[:, idx, :], axes=1)
        vals = phi * psi
        mean = vals.mean(axis=0)
        d = vals - mean[None]
        cov = np.einsum("smi,smj->mij", d, d) / (tt.shape[0] - 1)
        return mean, cov


# ---------------------------------------------------------------------------
# Transitional MCMC


def _find_delta_beta(log_liks: np.ndarray, beta: float, target_cov: float,
                     tol: float = 1e-10) -> float:
    """Largest tempering increment whose weights have CoV <= target
    (bisection; capped at beta = 1)."""
    remaining = 1.0 - beta
    finite = log_liks[np.isfinite(log_liks)]
    if finite.size == 0:
        raise StageStall("all likelihood values are -inf", beta_reached=beta)

    def weight_cov(delta: float) -> float:
        w = np.exp(delta * (log_liks - np.max(finite)))
        m = w.mean()
        if m == 0.0:
            return np.inf
        return float(w.std() / m)

    if weight_cov(remaining) <= target_cov:
        return remaining
    lo, hi = 0.0, remaining
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if weight_cov(mid) <= target_cov:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, remaining):
            break
    delta = lo if lo > 0.0 else hi
    if delta < 1e-12:
        raise StageStall("tempering increment underflowed", beta_reached=beta)
    return delta


def tmcmc(log_likelihood_fn, prior: PriorSpec, settings: TmcmcSettings,
          threads: int = 1) -> PosteriorResult:
    """Transitional MCMC (Ching–Chen) from prior to posterior.

    Per stage: choose the tempering increment by bisection on the
    coefficient of variation of the plausibility weights, resample
    proportionally to the weights, and mutate via Metropolis–Hastings
    chains continued from the resampled leads, with Gaussian proposals
    whose covariance is ``proposal_scale^2`` times the weighted sample
    covariance. Proposals outside the prior box are rejected without a
    likelihood evaluation. Seed-deterministic for any thread count: chains
    draw from per-(stage, lead) RNG streams and results are reduced in
    lead order.
    """
    n = settings.n_samples_per_stage
    root_ss = np.random.SeedSequence(settings.seed)
    rng = np.random.default_rng(root_ss.spawn(1)[0])
    samples = prior.sample(rng, n)

    def eval_batch(thetas):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return np.asarray(list(pool.map(log_likelihood_fn, thetas)))
        return np.asarray([log_likelihood_fn(t) for t in thetas])

    log_liks = eval_batch(samples)
    beta = 0.0
    betas = [0.0]
    acceptance_rates: list[float] = []
    log_evidence = 0.0

    for stage in range(1, settings.max_stages + 1):
        delta = _find_delta_beta(log_liks, beta, settings.target_weight_cov)
        beta_new = min(beta + delta, 1.0)
        shift = float(np.max(log_liks[np.isfinite(log_liks)]))
        logw = delta * np.where(np.isfinite(log_liks), log_liks - shift, -np.inf)
        log_evidence += float(logsumexp(logw) - np.log(n) + delta * shift)
        w = np.exp(logw)
        wn = w / w.sum()

        mean_w = wn @ samples
        dev = samples - mean_w
        cov_w = (dev * wn[:, None]).T @ dev
        prop_cov = settings.proposal_scale ** 2 * cov_w
        try:
            chol = np.linalg.cholesky(prop_cov)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * float(np.maximum(np.trace(prop_cov), 1e-30)) \
                / prior.p + 1e-18 * float(np.max(prior.widths)) ** 2
            chol = np.linalg.cholesky(prop_cov + jitter * np.eye(prior.p))

        counts = rng.multinomial(n, wn)
        lead_indices = np.nonzero(counts)[0]

        def run_chain(lead: int):
            chain_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=settings.seed,
                                       spawn_key=(stage, 0, int(lead))))
            state = samples[lead].copy()
            state_ll = log_liks[lead]
            out_states = np.empty((counts[lead], prior.p))
            out_lls = np.empty(counts[lead])
            accepted = 0
            for step_i in range(counts[lead]):
                prop = state + chol @ chain_rng.standard_normal(prior.p)
                if prior.contains(prop):
                    prop_ll = log_likelihood_fn(prop)
                    log_alpha = beta_new * (prop_ll - state_ll)
                    if np.log(chain_rng.random()) < log_alpha:
                        state, state_ll = prop, prop_ll
                        accepted += 1
                out_states[step_i] = state
                out_lls[step_i] = state_ll
            return out_states, out_lls, accepted

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                chain_results = list(pool.map(run_chain, lead_indices))
        else:
            chain_results = [run_chain(lead) for lead in lead_indices]

        samples = np.concatenate([c[0] for c in chain_results], axis=0)
        log_liks = np.concatenate([c[1] for c in chain_results])
        chain_ids = np.repeat(lead_indices, counts[lead_indices])
        n_accepted = sum(c[2] for c in chain_results)
        n_proposed = n

        for sweep in range(1, settings.n_mcmc_steps):

            def move_one(i: int):
                move_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=settings.seed,
                                           spawn_key=(stage, sweep, int(i))))
                state = samples[i]
                state_ll = log_liks[i]
                prop = state + chol @ move_rng.standard_normal(prior.p)
                if prior.contains(prop):
                    prop_ll = log_likelihood_fn(prop)
                    if np.log(move_rng.random()) < beta_new * (prop_ll - state_ll):
                        return prop, prop_ll, 1
                return state, state_ll, 0

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    moved = list(pool.map(move_one, range(n)))
            else:
                moved = [move_one(i) for i in range(n)]
            samples = np.asarray([mv[0] for mv in moved])
            log_liks = np.asarray([mv[1] for mv in moved])
            n_accepted += sum(mv[2] for mv in moved)
            n_proposed += n

        acceptance_rates.append(n_accepted / n_proposed)
        beta = beta_new
        betas.append(beta)
        if beta >= 1.0:
            break
    else:
        raise StageStall(f"beta only reached {beta} after "
                         f"{settings.max_stages} stages", beta_reached=beta)

    log_prior_const = -float(np.log(prior.widths).sum())
    return PosteriorResult(
        samples=samples,
        log_likelihoods=log_liks,
        log_posteriors=log_liks + log_prior_const,
        betas=betas,
        acceptance_rates=acceptance_rates,
        log_evidence=log_evidence,
        param_names=prior.names or tuple(f"theta{j + 1}" for j in range(prior.p)),
        settings=settings,
        chain_ids=chain_ids,
    )


def map_estimate(result: PosteriorResult) -> np.ndarray:
    """The stored sample with maximal log-posterior (no re-optimization)."""
    if result.samples.shape[0] == 0:
        raise ValueError("empty posterior result")
    return result.samples[int(np.argmax(result.log_posteriors))].copy()


def correlations(result: PosteriorResult | np.ndarray) -> np.ndarray:
    """Pearson correlation matrix of the posterior samples."""
    samples = result.samples if isinstance(result, PosteriorResult) else np.asarray(result)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise DimensionError("need a (n, p) sample matrix with n >= 2")
    if np.any(samples.std(axis=0) == 0.0):
        raise DegenerateVariance("constant sample column")
    corr = np.corrcoef(samples, rowvar=False)
    return np.atleast_2d(corr)


def save_posterior(result: PosteriorResult, csv_path, sidecar_path) -> None:
    """CSV of samples (one column per parameter, plus log-likelihood and
    log-posterior) and a JSON sidecar with the sampler history."""
    names = list(result.param_names)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names + ["log_likelihood", "log_posterior"]) + "\n")
        for row, ll, lp in zip(result.samples, result.log_likelihoods,
                               result.log_posteriors):
            vals = [f"{v:.17g}" for v in row] + [f"{ll:.17g}", f"{lp:.17g}"]
            fh.write(",".join(vals) + "\n")
    settings_dict = asdict(result.settings)
    sidecar = {
        "betas": [float(b) for b in result.betas],
        "acceptance_rates": [float(a) for a in result.acceptance_rates],
        "log_evidence": float(result.log_evidence),
        "n_stages": result.n_stages,
        "param_names": names,
        "settings": settings_dict,
        "settings_hash": _stable_hash(settings_dict),
        "seed": result.settings.seed,
        "counters": result.counters,
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stable_hash(obj) -> str:
    import hashlib

    blob = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
