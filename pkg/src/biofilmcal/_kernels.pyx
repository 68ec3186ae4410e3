# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot simulation kernels.

Twin of ``_kernels_py`` (same signatures, same semantics); the inner time
loop runs without the GIL so thread pools scale across simulations. Dense
linear solves use a local partial-pivoting LU, adequate for the small
(2n + 2) systems of this model.
"""
from libc.stdlib cimport free, malloc
from libc.math cimport fabs

import numpy as np

BACKEND_NAME = "compiled"


cdef inline double pen1(double xi, double kp) noexcept nogil:
    cdef double om = 1.0 - xi
    return 2.0 * kp * (2.0 * xi - 1.0) / (xi * xi * xi * om * om * om)


cdef inline double pen2(double xi, double kp) noexcept nogil:
    cdef double om = 1.0 - xi
    cdef double tw = 2.0 * xi - 1.0
    return 2.0 * kp * (2.0 * xi * om + 3.0 * tw * tw) / \
        (xi * xi * xi * xi * om * om * om * om)


cdef void residual_c(const double* x, const double* xprev, int n, double dt,
                     const double* a, const double* b, const double* eta, double eta0,
                     double kp, double c, double alpha, int gip,
                     double* r) noexcept nogil:
    cdef int i, j
    cdef double s, phid, psid, phibar_i, gamma, total
    gamma = x[2 * n + 1]
    total = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += a[i * n + j] * x[j] * x[n + j]
        phid = (x[i] - xprev[i]) / dt
        psid = (x[n + i] - xprev[n + i]) / dt
        phibar_i = x[i] * x[n + i]
        r[i] = (-c * x[n + i] * s
                + eta[i] * (phid * x[n + i] * x[n + i] + phibar_i * psid + phid)
                + gamma + pen1(x[i], kp))
        r[n + i] = (-c * x[i] * s + alpha * b[i] * x[n + i]
                    + eta[i] * (psid * x[i] * x[i] + phibar_i * phid)
                    + (gamma if gip else 0.0) + pen1(x[n + i], kp))
        total += x[i]
    r[2 * n] = eta0 * (x[2 * n] - xprev[2 * n]) / dt + gamma + pen1(x[2 * n], kp)
    r[2 * n + 1] = total + x[2 * n] - 1.0


cdef void jacobian_c(const double* x, const double* xprev, int n, double dt,
                     const double* a, const double* b, const double* eta, double eta0,
                     double kp, double c, double alpha, int gip,
                     double* jac) noexcept nogil:
    cdef int m = 2 * n + 2
    cdef int i, j
    cdef double s, phid, psid, phibar_i
    for i in range(m * m):
        jac[i] = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += a[i * n + j] * x[j] * x[n + j]
        phid = (x[i] - xprev[i]) / dt
        psid = (x[n + i] - xprev[n + i]) / dt
        phibar_i = x[i] * x[n + i]
        for j in range(n):
            jac[i * m + j] = -c * x[n + i] * a[i * n + j] * x[n + j]
            jac[i * m + n + j] = -c * x[n + i] * a[i * n + j] * x[j]
            jac[(n + i) * m + j] = -c * x[i] * a[i * n + j] * x[n + j]
            jac[(n + i) * m + n + j] = -c * x[i] * a[i * n + j] * x[j]
        jac[i * m + i] += eta[i] * ((x[n + i] * x[n + i] + 1.0) / dt
                                    + x[n + i] * psid) + pen2(x[i], kp)
        jac[i * m + n + i] += -c * s + eta[i] * (2.0 * x[n + i] * phid
                                                 + x[i] * psid + phibar_i / dt)
        jac[(n + i) * m + i] += -c * s + eta[i] * (2.0 * x[i] * psid
                                                   + x[n + i] * phid + phibar_i / dt)
        jac[(n + i) * m + n + i] += alpha * b[i] \
            + eta[i] * (x[i] * x[i] / dt + x[i] * phid) + pen2(x[n + i], kp)
        jac[i * m + 2 * n + 1] = 1.0
        if gip:
            jac[(n + i) * m + 2 * n + 1] = 1.0
        jac[(2 * n + 1) * m + i] = 1.0
    jac[2 * n * m + 2 * n] = eta0 / dt + pen2(x[2 * n], kp)
    jac[2 * n * m + 2 * n + 1] = 1.0
    jac[(2 * n + 1) * m + 2 * n] = 1.0


cdef int lu_factor_c(double* lu, int m, int* piv) noexcept nogil:
    """In-place LU with partial pivoting; returns -1 on singularity."""
    cdef int i, j, k, pr
    cdef double big, tmp, mult
    for k in range(m):
        big = fabs(lu[k * m + k])
        pr = k
        for i in range(k + 1, m):
            if fabs(lu[i * m + k]) > big:
                big = fabs(lu[i * m + k])
                pr = i
        if big == 0.0:
            return -1
        piv[k] = pr
        if pr != k:
            for j in range(m):
                tmp = lu[k * m + j]
                lu[k * m + j] = lu[pr * m + j]
                lu[pr * m + j] = tmp
        for i in range(k + 1, m):
            mult = lu[i * m + k] / lu[k * m + k]
            lu[i * m + k] = mult
            for j in range(k + 1, m):
                lu[i * m + j] -= mult * lu[k * m + j]
    return 0


cdef void lu_solve_c(double* lu, int* piv, int m, double* bvec) noexcept nogil:
    cdef int i, j
    cdef double tmp, acc
    for i in range(m):
        if piv[i] != i:
            tmp = bvec[i]
            bvec[i] = bvec[piv[i]]
            bvec[piv[i]] = tmp
    for i in range(m):
        acc = bvec[i]
        for j in range(i):
            acc -= lu[i * m + j] * bvec[j]
        bvec[i] = acc
    for i in range(m - 1, -1, -1):
        acc = bvec[i]
        for j in range(i + 1, m):
            acc -= lu[i * m + j] * bvec[j]
        bvec[i] = acc / lu[i * m + i]


cdef int newton_c(const double* xprev, double* x, int n, double dt,
                  const double* a, const double* b, const double* eta, double eta0, double kp,
                  double c, double alpha, double tol, int max_iter, int gip,
                  double* res, double* jac, int* piv, double* xtry,
                  double* res_norm_out) noexcept nogil:
    """Damped Newton for one implicit step; 0 ok, 1 no convergence,
    2 domain escape."""
    cdef int m = 2 * n + 2
    cdef int it, i, ls
    cdef double res_norm, scale
    cdef bint ok
    for i in range(m):
        x[i] = xprev[i]
    for it in range(max_iter + 1):
        residual_c(x, xprev, n, dt, a, b, eta, eta0, kp, c, alpha, gip, res)
        res_norm = 0.0
        for i in range(m):
            if fabs(res[i]) > res_norm:
                res_norm = fabs(res[i])
        res_norm_out[0] = res_norm
        if res_norm <= tol:
            return 0
        if it == max_iter:
            return 1
        jacobian_c(x, xprev, n, dt, a, b, eta, eta0, kp, c, alpha, gip, jac)
        if lu_factor_c(jac, m, piv) != 0:
            return 1
        for i in range(m):
            res[i] = -res[i]
        lu_solve_c(jac, piv, m, res)  # res now holds the Newton update
        scale = 1.0
        ok = False
        for ls in range(11):
            for i in range(m):
                xtry[i] = x[i] + scale * res[i]
            ok = True
            for i in range(2 * n + 1):
                if not (xtry[i] > 0.0 and xtry[i] < 1.0):
                    ok = False
                    break
            if ok:
                break
            scale *= 0.5
        if not ok:
            return 2
        for i in range(m):
            x[i] = xtry[i]
    return 1


def simulate_loop(const double[::1] x0, int n, double dt,
                  const double[:, ::1] a, const double[::1] b,
                  const double[::1] eta, double eta0, double kp,
                  const double[::1] c_vals, const double[::1] a_vals, double tol,
                  int max_iter, int gamma_in_psi, double[:, ::1] out):
    """Fill ``out[(N+1), 2n+2]`` with the trajectory. Returns
    ``(status, fail_step, res_norm)``; ``fail_step`` is 1-based."""
    cdef int n_steps = c_vals.shape[0]
    cdef int m = 2 * n + 2
    cdef int k, i, status
    cdef double res_norm = 0.0
    cdef double* work = <double*> malloc(sizeof(double) * (m * m + 4 * m))
    cdef int* piv = <int*> malloc(sizeof(int) * m)
    if work == NULL or piv == NULL:
        free(work)
        free(piv)
        raise MemoryError()
    cdef double* jac = work
    cdef double* res = work + m * m
    cdef double* xtry = res + m
    cdef double* xp = xtry + m
    cdef double* x = xp + m
    status = 0
    k = 0
    with nogil:
        for i in range(m):
            xp[i] = x0[i]
            out[0, i] = x0[i]
        for k in range(n_steps):
            status = newton_c(xp, x, n, dt, &a[0, 0], &b[0], &eta[0], eta0,
                              kp, c_vals[k], a_vals[k], tol, max_iter,
                              gamma_in_psi, res, jac, piv, xtry, &res_norm)
            if status != 0:
                break
            for i in range(m):
                out[k + 1, i] = x[i]
                xp[i] = x[i]
    free(work)
    free(piv)
    if status != 0:
        return status, k + 1, res_norm
    return 0, 0, 0.0


def rom_loop(const double[::1] x0, int n, double dt,
             const double[:, ::1] a, const double[::1] b,
             const double[::1] eta, double eta0, double kp,
             const double[::1] c_vals, const double[::1] a_vals, double tol,
             int max_iter, int gamma_in_psi, const long[::1] kinds,
             const long[::1] iis, const long[::1] jjs,
             double[:, ::1] out, double[:, :, ::1] sens_out):
    """Base trajectory plus first-order sensitivity sweep (staggered).

    Mirrors ``_kernels_py.rom_loop``: per time step, solve the base system,
    rebuild and factor the Jacobian at the converged state, then solve the
    ``p`` linearized sensitivity systems with that factorization (a Newton
    loop that must converge within two iterations). Returns
    ``(status, fail_step, res_norm, order, param_index, max_lin_iters)``.
    """
    cdef int n_steps = c_vals.shape[0]
    cdef int p = kinds.shape[0]
    cdef int m = 2 * n + 2
    cdef int k, i, j, q, status, it, max_lin, fail_param, ri, cj
    cdef double res_norm = 0.0
    cdef double c, alpha, tol1, rn, acc
    cdef bint converged
    cdef double* work = <double*> malloc(sizeof(double) * (2 * m * m + 7 * m))
    cdef int* piv = <int*> malloc(sizeof(int) * m)
    if work == NULL or piv == NULL:
        free(work)
        free(piv)
        raise MemoryError()
    cdef double* jac = work                  # factored copy
    cdef double* jac0 = jac + m * m          # unfactored Jacobian
    cdef double* res = jac0 + m * m
    cdef double* xtry = res + m
    cdef double* xp = xtry + m
    cdef double* x = xp + m
    cdef double* rhs = x + m
    cdef double* x1 = rhs + m
    cdef double* r1 = x1 + m
    status = 0
    fail_param = -1
    max_lin = 0
    k = 0
    with nogil:
        for i in range(m):
            xp[i] = x0[i]
            out[0, i] = x0[i]
        for j in range(p):
            for i in range(m):
                sens_out[j, 0, i] = 0.0
        for k in range(n_steps):
            c = c_vals[k]
            alpha = a_vals[k]
            status = newton_c(xp, x, n, dt, &a[0, 0], &b[0], &eta[0], eta0,
                              kp, c, alpha, tol, max_iter, gamma_in_psi,
                              res, jac, piv, xtry, &res_norm)
            if status != 0:
                break
            for i in range(m):
                out[k + 1, i] = x[i]
            jacobian_c(x, xp, n, dt, &a[0, 0], &b[0], &eta[0], eta0, kp,
                       c, alpha, gamma_in_psi, jac0)
            for i in range(m * m):
                jac[i] = jac0[i]
            if lu_factor_c(jac, m, piv) != 0:
                status = 1
                break
            for j in range(p):
                # rhs = M(x) @ sens_prev / dt - dR/dtheta_j
                for i in range(m):
                    rhs[i] = 0.0
                for i in range(n):
                    rhs[i] = eta[i] * ((x[n + i] * x[n + i] + 1.0)
                                       * sens_out[j, k, i]
                                       + x[i] * x[n + i] * sens_out[j, k, n + i]) / dt
                    rhs[n + i] = eta[i] * (x[i] * x[n + i] * sens_out[j, k, i]
                                           + x[i] * x[i] * sens_out[j, k, n + i]) / dt
                rhs[2 * n] = eta0 * sens_out[j, k, 2 * n] / dt
                if kinds[j] == 0:
                    # A entry (ri, cj): d(A@phibar) has phibar_cj at row ri
                    # and (off-diagonal) phibar_ri at row cj.
                    ri = <int> iis[j]
                    cj = <int> jjs[j]
                    rhs[ri] += c * x[n + ri] * x[cj] * x[n + cj]
                    rhs[n + ri] += c * x[ri] * x[cj] * x[n + cj]
                    if ri != cj:
                        rhs[cj] += c * x[n + cj] * x[ri] * x[n + ri]
                        rhs[n + cj] += c * x[cj] * x[ri] * x[n + ri]
                else:
                    ri = <int> iis[j]
                    rhs[n + ri] -= alpha * x[n + ri]
                tol1 = 0.0
                for i in range(m):
                    if fabs(rhs[i]) > tol1:
                        tol1 = fabs(rhs[i])
                tol1 = tol * (tol1 if tol1 > 1.0 else 1.0)
                for i in range(m):
                    x1[i] = sens_out[j, k, i]
                converged = False
                for it in range(2):
                    rn = 0.0
                    for i in range(m):
                        acc = -rhs[i]
                        for q in range(m):
                            acc += jac0[i * m + q] * x1[q]
                        r1[i] = acc
                        if fabs(acc) > rn:
                            rn = fabs(acc)
                    if rn <= tol1:
                        converged = True
                        if it > max_lin:
                            max_lin = it
                        break
                    for i in range(m):
                        r1[i] = -r1[i]
                    lu_solve_c(jac, piv, m, r1)
                    for i in range(m):
                        x1[i] += r1[i]
                if not converged:
                    rn = 0.0
                    for i in range(m):
                        acc = -rhs[i]
                        for q in range(m):
                            acc += jac0[i * m + q] * x1[q]
                        if fabs(acc) > rn:
                            rn = fabs(acc)
                    if rn <= tol1:
                        converged = True
                        if 2 > max_lin:
                            max_lin = 2
                if not converged:
                    status = 3
                    res_norm = rn
                    fail_param = j
                    break
                for i in range(m):
                    sens_out[j, k + 1, i] = x1[i]
            if status != 0:
                break
            for i in range(m):
                xp[i] = x[i]
    free(work)
    free(piv)
    if status == 3:
        return 3, k + 1, res_norm, 1, fail_param, max_lin
    if status != 0:
        return status, k + 1, res_norm, 0, -1, max_lin
    return 0, 0, 0.0, 0, -1, max_lin
