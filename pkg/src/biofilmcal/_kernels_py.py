"""Pure-Python (numpy) implementation of the hot simulation kernels.

Twin of the compiled ``_kernels`` extension: identical call signatures and
semantics, selected at import time by :mod:`biofilmcal.kernels`. Operates on
raw state vectors ``[phi_1..n, psi_1..n, phi_0, gamma]``; formula-level
parity with :mod:`biofilmcal.solver` is enforced by tests.

Status codes returned by the loops: 0 converged, 1 Newton non-convergence,
2 domain escape, 3 sensitivity solve needed more than the allowed linear
iterations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

BACKEND_NAME = "python"


def _penalty_d1(xi, kp):
    return 2.0 * kp * (2.0 * xi - 1.0) / (xi ** 3 * (1.0 - xi) ** 3)


def _penalty_d2(xi, kp):
    return 2.0 * kp * (2.0 * xi * (1.0 - xi) + 3.0 * (2.0 * xi - 1.0) ** 2) \
        / (xi ** 4 * (1.0 - xi) ** 4)


def _residual(x, x_prev, n, dt, a, b, eta, eta0, kp, c, alpha, gamma_in_psi):
    phi, psi = x[:n], x[n:2 * n]
    phid = (phi - x_prev[:n]) / dt
    psid = (psi - x_prev[n:2 * n]) / dt
    phibar = phi * psi
    s = a @ phibar
    gamma = x[2 * n + 1]
    r = np.empty(2 * n + 2)
    r[:n] = (-c * psi * s + eta * (phid * psi ** 2 + phibar * psid + phid)
             + gamma + _penalty_d1(phi, kp))
    r[n:2 * n] = (-c * phi * s + alpha * b * psi
                  + eta * (psid * phi ** 2 + phibar * phid)
                  + (gamma if gamma_in_psi else 0.0) + _penalty_d1(psi, kp))
    r[2 * n] = eta0 * (x[2 * n] - x_prev[2 * n]) / dt + gamma \
        + _penalty_d1(x[2 * n], kp)
    r[2 * n + 1] = phi.sum() + x[2 * n] - 1.0
    return r


def _jacobian(x, x_prev, n, dt, a, b, eta, eta0, kp, c, alpha, gamma_in_psi):
    phi, psi = x[:n], x[n:2 * n]
    phid = (phi - x_prev[:n]) / dt
    psid = (psi - x_prev[n:2 * n]) / dt
    phibar = phi * psi
    s = a @ phibar
    m = 2 * n + 2
    jac = np.zeros((m, m))
    diag = np.diag_indices(n)
    jac[:n, :n] = -c * psi[:, None] * a * psi[None, :]
    jac[:n, :n][diag] += eta * ((psi ** 2 + 1.0) / dt + psi * psid) \
        + _penalty_d2(phi, kp)
    jac[:n, n:2 * n] = -c * psi[:, None] * a * phi[None, :]
    jac[:n, n:2 * n][diag] += -c * s + eta * (2.0 * psi * phid + phi * psid
                                              + phibar / dt)
    jac[:n, 2 * n + 1] = 1.0
    jac[n:2 * n, :n] = -c * phi[:, None] * a * psi[None, :]
    jac[n:2 * n, :n][diag] += -c * s + eta * (2.0 * phi * psid + psi * phid
                                              + phibar / dt)
    jac[n:2 * n, n:2 * n] = -c * phi[:, None] * a * phi[None, :]
    jac[n:2 * n, n:2 * n][diag] += alpha * b + eta * (phi ** 2 / dt
                                                      + phi * phid) \
        + _penalty_d2(psi, kp)
    if gamma_in_psi:
        jac[n:2 * n, 2 * n + 1] = 1.0
    jac[2 * n, 2 * n] = eta0 / dt + _penalty_d2(x[2 * n], kp)
    jac[2 * n, 2 * n + 1] = 1.0
    jac[2 * n + 1, :n] = 1.0
    jac[2 * n + 1, 2 * n] = 1.0
    return jac


def _mass_apply(x, n, eta, eta0, v):
    """Apply d(residual)/d(rates) at state x to a vector v."""
    phi, psi = x[:n], x[n:2 * n]
    phibar = phi * psi
    out = np.zeros(2 * n + 2)
    out[:n] = eta * ((psi ** 2 + 1.0) * v[:n] + phibar * v[n:2 * n])
    out[n:2 * n] = eta * (phibar * v[:n] + phi ** 2 * v[n:2 * n])
    out[2 * n] = eta0 * v[2 * n]
    return out


def _dtheta(x, n, c, alpha, kind, i, j):
    phi, psi = x[:n], x[n:2 * n]
    phibar = phi * psi
    out = np.zeros(2 * n + 2)
    if kind == 0:
        ds = np.zeros(n)
        ds[i] += phibar[j]
        if i != j:
            ds[j] += phibar[i]
        out[:n] = -c * psi * ds
        out[n:2 * n] = -c * phi * ds
    else:
        out[n + i] = alpha * psi[i]
    return out


def _newton(x_prev, n, dt, a, b, eta, eta0, kp, c, alpha, tol, max_iter,
            gamma_in_psi):
    x = x_prev.copy()
    res_norm = np.inf
    for _ in range(max_iter + 1):
        r = _residual(x, x_prev, n, dt, a, b, eta, eta0, kp, c, alpha,
                      gamma_in_psi)
        res_norm = float(np.max(np.abs(r)))
        if res_norm <= tol:
            return x, 0, res_norm
        jac = _jacobian(x, x_prev, n, dt, a, b, eta, eta0, kp, c, alpha,
                        gamma_in_psi)
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


def simulate_loop(x0, n, dt, a, b, eta, eta0, kp, c_vals, a_vals, tol,
                  max_iter, gamma_in_psi, out):
    """Fill ``out[(N+1), 2n+2]`` with the trajectory. Returns
    ``(status, fail_step, res_norm)``; ``fail_step`` is 1-based."""
    n_steps = c_vals.shape[0]
    out[0] = x0
    x = np.asarray(x0, dtype=float).copy()
    for k in range(n_steps):
        x, status, res_norm = _newton(x, n, dt, a, b, eta, eta0, kp,
                                      c_vals[k], a_vals[k], tol, max_iter,
                                      gamma_in_psi)
        if status != 0:
            return status, k + 1, res_norm
        out[k + 1] = x
    return 0, 0, 0.0


def rom_loop(x0, n, dt, a, b, eta, eta0, kp, c_vals, a_vals, tol, max_iter,
             gamma_in_psi, kinds, iis, jjs, out, sens_out):
    """Base trajectory plus first-order sensitivity sweep (staggered).

    ``sens_out`` has shape ``(p, N+1, 2n+2)`` and is initialized to zero at
    step 0 (deterministic initial condition). Each time step first solves
    the base system, then the ``p`` linearized sensitivity systems reusing
    the converged Jacobian factorization. Returns
    ``(status, fail_step, res_norm, order, param_index, max_lin_iters)``.
    """
    n_steps = c_vals.shape[0]
    p = kinds.shape[0]
    out[0] = x0
    sens_out[:, 0, :] = 0.0
    x = np.asarray(x0, dtype=float).copy()
    max_lin_iters = 0
    for k in range(n_steps):
        c, alpha = c_vals[k], a_vals[k]
        x, status, res_norm = _newton(x, n, dt, a, b, eta, eta0, kp,
                                      c, alpha, tol, max_iter, gamma_in_psi)
        if status != 0:
            return status, k + 1, res_norm, 0, -1, max_lin_iters
        out[k + 1] = x
        jac = _jacobian(x, out[k], n, dt, a, b, eta, eta0, kp, c, alpha,
                        gamma_in_psi)
        lu = scipy.linalg.lu_factor(jac)
        for j in range(p):
            rhs = _mass_apply(x, n, eta, eta0, sens_out[j, k]) / dt \
                - _dtheta(x, n, c, alpha, kinds[j], iis[j], jjs[j])
            # Newton on the (linear) sensitivity system: converges in one
            # update; a second pass only verifies the residual.
            x1 = sens_out[j, k].copy()
            tol1 = tol * max(1.0, float(np.max(np.abs(rhs))))
            converged = False
            for it in range(2):
                r1 = jac @ x1 - rhs
                if np.max(np.abs(r1)) <= tol1:
                    converged = True
                    max_lin_iters = max(max_lin_iters, it)
                    break
                x1 = x1 + scipy.linalg.lu_solve(lu, -r1)
            else:
                r1 = jac @ x1 - rhs
                if np.max(np.abs(r1)) <= tol1:
                    converged = True
                    max_lin_iters = max(max_lin_iters, 2)
            if not converged:
                return 3, k + 1, float(np.max(np.abs(r1))), 1, j, max_lin_iters
            sens_out[j, k + 1] = x1
    return 0, 0, 0.0, 0, -1, max_lin_iters
