"""Deterministic forward model: residual assembly and implicit time stepping.

The governing system for ``n`` species couples, per species ``i``, a
volume-fraction equation and a living-fraction equation, both driven by the
energy density ``-1/2 c* phibar.A.phibar + 1/2 alpha* psi.B.psi``, a
rate-quadratic dissipation, the total-volume constraint via the Lagrange
multiplier ``gamma``, and a barrier penalty ``k_p / (xi^2 (1-xi)^2)`` keeping
every internal variable inside (0, 1). The empty phase carries a
dissipation-only equation ``0 = eta_0 * phidot_0 + gamma + penalty'(phi_0)``,
closing the ``2n + 2`` system together with the constraint row.

Residual ordering: ``[R_phi_1..n, R_psi_1..n, R_phi0, R_constraint]``.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError, DomainEscape, NonConvergence
from .model import (GAMMA_IN_PSI_DEFAULT, EnvAt, Environment, MaterialParams,
                    SimConfig, State, Trajectory)

__all__ = ["residual", "step", "simulate", "penalty_d1", "penalty_d2"]


def penalty_d1(xi, k_p):
    """First derivative of the barrier energy k_p/(xi^2 (1-xi)^2)."""
    xi = np.asarray(xi, dtype=float)
    return 2.0 * k_p * (2.0 * xi - 1.0) / (xi ** 3 * (1.0 - xi) ** 3)


def penalty_d2(xi, k_p):
    """Second derivative of the barrier energy."""
    xi = np.asarray(xi, dtype=float)
    return 2.0 * k_p * (2.0 * xi * (1.0 - xi) + 3.0 * (2.0 * xi - 1.0) ** 2) \
        / (xi ** 4 * (1.0 - xi) ** 4)


def _check_domain(state: State) -> None:
    if not state.interior():
        raise DomainError("internal variables must lie strictly inside (0, 1)")


def residual(state: State, rates: State, params: MaterialParams, env_at: EnvAt,
             gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT) -> np.ndarray:
    """Strong-form residual of the governing equations at one instant.

    Parameters
    ----------
    state, rates : State
        Current internal variables and their time derivatives (the rate
        entries for ``gamma`` are ignored; it is algebraic).
    params : MaterialParams
    env_at : EnvAt
        Instantaneous nutrient/antibiotic levels and penalty coefficient.

    Returns
    -------
    (2n + 2,) array
        ``[R_phi_1..n, R_psi_1..n, R_phi0, R_constraint]``.
    """
    n = params.n
    if state.n != n or rates.n != n:
        raise DimensionError("state/rates species count does not match params")
    _check_domain(state)

    phi, psi = state.phi, state.psi
    phid, psid = rates.phi, rates.psi
    phibar = phi * psi
    s = params.a @ phibar
    gamma = state.gamma
    c, alpha, kp = env_at.c_star, env_at.alpha_star, env_at.k_p

    r = np.empty(2 * n + 2)
    r[:n] = (-c * psi * s
             + params.eta * (phid * psi ** 2 + phibar * psid + phid)
             + gamma + penalty_d1(phi, kp))
    r[n:2 * n] = (-c * phi * s + alpha * params.b * psi
                  + params.eta * (psid * phi ** 2 + phibar * phid)
                  + (gamma if gamma_in_psi else 0.0) + penalty_d1(psi, kp))
    r[2 * n] = params.eta_empty * rates.phi_empty + gamma \
        + penalty_d1(state.phi_empty, kp)
    r[2 * n + 1] = phi.sum() + state.phi_empty - 1.0
    return r


def be_jacobian(x: np.ndarray, x_prev: np.ndarray, dt: float,
                params: MaterialParams, env_at: EnvAt,
                gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT) -> np.ndarray:
    """Jacobian of the backward-Euler residual w.r.t. the new state vector."""
    n = params.n
    phi, psi = x[:n], x[n:2 * n]
    phi0 = x[2 * n]
    phid = (phi - x_prev[:n]) / dt
    psid = (psi - x_prev[n:2 * n]) / dt
    phibar = phi * psi
    s = params.a @ phibar
    c, alpha, kp = env_at.c_star, env_at.alpha_star, env_at.k_p
    eta = params.eta

    m = 2 * n + 2
    jac = np.zeros((m, m))
    # phi rows
    jac[:n, :n] = -c * psi[:, None] * params.a * psi[None, :]
    jac[:n, :n][np.diag_indices(n)] += (
        eta * ((psi ** 2 + 1.0) / dt + psi * psid) + penalty_d2(phi, kp))
    jac[:n, n:2 * n] = -c * psi[:, None] * params.a * phi[None, :]
    jac[:n, n:2 * n][np.diag_indices(n)] += (
        -c * s + eta * (2.0 * psi * phid + phi * psid + phibar / dt))
    jac[:n, 2 * n + 1] = 1.0
    # psi rows
    jac[n:2 * n, :n] = -c * phi[:, None] * params.a * psi[None, :]
    jac[n:2 * n, :n][np.diag_indices(n)] += (
        -c * s + eta * (2.0 * phi * psid + psi * phid + phibar / dt))
    jac[n:2 * n, n:2 * n] = -c * phi[:, None] * params.a * phi[None, :]
    jac[n:2 * n, n:2 * n][np.diag_indices(n)] += (
        alpha * params.b + eta * (phi ** 2 / dt + phi * phid)
        + penalty_d2(psi, kp))
    if gamma_in_psi:
        jac[n:2 * n, 2 * n + 1] = 1.0
    # empty-phase row
    jac[2 * n, 2 * n] = params.eta_empty / dt + penalty_d2(phi0, kp)
    jac[2 * n, 2 * n + 1] = 1.0
    # constraint row
    jac[2 * n + 1, :n] = 1.0
    jac[2 * n + 1, 2 * n] = 1.0
    return jac


def rate_mass_matrix(x: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Derivative of the residual w.r.t. the rates, at state vector ``x``."""
    n = params.n
    phi, psi = x[:n], x[n:2 * n]
    phibar = phi * psi
    eta = params.eta
    m = 2 * n + 2
    mass = np.zeros((m, m))
    idx = np.arange(n)
    mass[idx, idx] = eta * (psi ** 2 + 1.0)
    mass[idx, n + idx] = eta * phibar
    mass[n + idx, idx] = eta * phibar
    mass[n + idx, n + idx] = eta * phi ** 2
    mass[2 * n, 2 * n] = params.eta_empty
    return mass


def dtheta_residual(x: np.ndarray, params: MaterialParams, env_at: EnvAt,
                    kind: int, i: int, j: int) -> np.ndarray:
    """Partial derivative of the residual w.r.t. one (A, B) entry."""
    n = params.n
    phi, psi = x[:n], x[n:2 * n]
    phibar = phi * psi
    out = np.zeros(2 * n + 2)
    if kind == 0:  # A entry (i, j), i <= j, symmetric
        ds = np.zeros(n)
        ds[i] += phibar[j]
        if i != j:
            ds[j] += phibar[i]
        out[:n] = -env_at.c_star * psi * ds
        out[n:2 * n] = -env_at.c_star * phi * ds
    else:  # B diagonal entry i
        out[n + i] = env_at.alpha_star * psi[i]
    return out


def step(state: State, dt: float, params: MaterialParams, env_at: EnvAt,
         newton_tol: float = 1e-10, newton_max_iter: int = 50,
         gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT) -> State:
    """Advance one implicit (backward-Euler) step.

    The returned state satisfies the residual, with backward-difference
    rates, to ``newton_tol`` in max-norm; ``gamma`` is solved as an
    unknown alongside the internal variables, warm-started from ``state``.

    Raises
    ------
    NonConvergence
        If Newton does not reach the tolerance within ``newton_max_iter``.
    DomainEscape
        If an iterate leaves (0, 1) and backtracking cannot recover.
    """
    _check_domain(state)
    n = params.n
    x_prev = state.as_vector()
    x, status, res_norm = _newton_step_py(
        x_prev, dt, params, env_at, newton_tol, newton_max_iter, gamma_in_psi)
    if status == 2:
        raise DomainEscape("Newton iterate left (0, 1)")
    if status == 1:
        raise NonConvergence(
            f"Newton did not converge (residual max-norm {res_norm:.3e})",
            residual_norm=res_norm)
    return State.from_vector(x, n)


def _newton_step_py(x_prev, dt, params, env_at, tol, max_iter, gamma_in_psi):
    """Damped Newton for one backward-Euler step (reference implementation).

    Returns ``(x, status, res_norm)`` with status 0 = converged,
    1 = non-convergence, 2 = domain escape.
    """
    n = params.n
    x = x_prev.copy()
    res_norm = np.inf
    for _ in range(max_iter + 1):
        rates = (x - x_prev) / dt
        r = residual(State.from_vector(x, n),
                     State.from_vector(rates, n), params, env_at, gamma_in_psi)
        res_norm = float(np.max(np.abs(r)))
        if res_norm <= tol:
            return x, 0, res_norm
        jac = be_jacobian(x, x_prev, dt, params, env_at, gamma_in_psi)
        delta = np.linalg.solve(jac, -r)
        scale = 1.0
        for _ in range(11):
            x_try = x + scale * delta
            interior = x_try[: 2 * n + 1]
            if np.all(interior > 0.0) and np.all(interior < 1.0):
                break
            scale *= 0.5
        else:
            return x, 2, res_norm
        x = x_try
    return x, 1, res_norm


def simulate(config: SimConfig, params: MaterialParams, env: Environment,
             gamma_in_psi: bool = GAMMA_IN_PSI_DEFAULT,
             backend: str | None = None) -> Trajectory:
    """Integrate the forward model over ``config.n_steps`` implicit steps.

    Deterministic: identical inputs produce bit-identical trajectories.
    Schedules are evaluated at the end time of each step (implicit
    convention). Solver failures are annotated with the failing 1-based
    time-step index.
    """
    if params.n != config.n_species:
        raise DimensionError("params species count does not match config")
    kern = kernels.get_backend(backend)
    times = config.times()
    c_vals = env.c_star.at_many(times[1:])
    a_vals = env.alpha_star.at_many(times[1:])
    out = np.empty((config.n_steps + 1, 2 * config.n_species + 2))
    status, fail_step, res_norm = kern.simulate_loop(
        config.initial_state.as_vector(), config.n_species, config.dt,
        params.a, params.b, params.eta, params.eta_empty, env.k_p,
        c_vals, a_vals, config.newton_tol, config.newton_max_iter,
        1 if gamma_in_psi else 0, out)
    _raise_for_status(status, fail_step, res_norm)
    return Trajectory(times, out, config.n_species)


def _raise_for_status(status: int, fail_step: int, res_norm: float,
                      order: int | None = None, param_index: int | None = None):
    if status == 0:
        return
    where = f"time step {fail_step}"
    if order is not None and order > 0:
        where += f" (sensitivity solve, parameter {param_index})"
    if status == 2:
        raise DomainEscape(f"iterate left (0, 1) at {where}", step_index=fail_step)
    raise NonConvergence(
        f"Newton did not converge at {where} (residual max-norm {res_norm:.3e})",
        residual_norm=res_norm, step_index=fail_step,
        order=order, param_index=param_index)
