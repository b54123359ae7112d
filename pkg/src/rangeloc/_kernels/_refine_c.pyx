# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled refinement kernel; mirrors ``_refine_py`` step for step.

Differences are implementation-level only: the polar factor of the trial
update comes from a determinant-scaled Newton iteration instead of an SVD
(the iteration acts on singular values only, so the factor is identical to
rounding), and the 6x6 Gauss-Newton system is solved with a hand-rolled
Cholesky factorization.
"""

import numpy as np

from libc.math cimport cbrt, fabs, sqrt

DEF ALPHA_FLOOR = 1e-20
DEF GN_DAMP = 1e-10


cdef inline double _det3(const double* a) noexcept nogil:
    return (a[0] * (a[4] * a[8] - a[5] * a[7])
            - a[1] * (a[3] * a[8] - a[5] * a[6])
            + a[2] * (a[3] * a[7] - a[4] * a[6]))


cdef inline void _inv3t(const double* a, double* out) noexcept nogil:
    # out = (a^{-1})^T = cofactor(a) / det(a)
    cdef double inv_det = 1.0 / _det3(a)
    out[0] = (a[4] * a[8] - a[5] * a[7]) * inv_det
    out[1] = -(a[3] * a[8] - a[5] * a[6]) * inv_det
    out[2] = (a[3] * a[7] - a[4] * a[6]) * inv_det
    out[3] = -(a[1] * a[8] - a[2] * a[7]) * inv_det
    out[4] = (a[0] * a[8] - a[2] * a[6]) * inv_det
    out[5] = -(a[0] * a[7] - a[1] * a[6]) * inv_det
    out[6] = (a[1] * a[5] - a[2] * a[4]) * inv_det
    out[7] = -(a[0] * a[5] - a[2] * a[3]) * inv_det
    out[8] = (a[0] * a[4] - a[1] * a[3]) * inv_det


cdef int _polar3(const double* b, double* out) noexcept nogil:
    """Orthogonal polar factor via scaled Newton; needs det(b) > 0."""
    cdef double x[9]
    cdef double y[9]
    cdef double det, gamma, nv, diff
    cdef int i, k
    for i in range(9):
        x[i] = b[i]
    if _det3(x) <= 0.0:
        return 1
    for k in range(40):
        det = _det3(x)
        if det <= 0.0:
            return 1
        gamma = 1.0 / cbrt(det)
        for i in range(9):
            x[i] *= gamma
        _inv3t(x, y)
        diff = 0.0
        for i in range(9):
            nv = 0.5 * (x[i] + y[i])
            diff += fabs(nv - x[i])
            x[i] = nv
        if diff < 1e-15:
            break
    for i in range(9):
        out[i] = x[i]
    return 0


cdef inline void _tangent(const double* r, const double* m, double* out) noexcept nogil:
    # out = m/2 - (r @ m^T @ r) / 2
    cdef double mtr[9]
    cdef int i, j, k
    cdef double acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += m[3 * k + i] * r[3 * k + j]
            mtr[3 * i + j] = acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += r[3 * i + k] * mtr[3 * k + j]
            out[3 * i + j] = 0.5 * m[3 * i + j] - 0.5 * acc


cdef inline double _frob2(const double* a, int n) noexcept nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(n):
        acc += a[i] * a[i]
    return acc


cdef int _chol6(const double* a, double* l) noexcept nogil:
    # lower-triangular Cholesky of a 6x6 SPD matrix; 1 on failure
    cdef int i, j, k
    cdef double acc
    for i in range(36):
        l[i] = 0.0
    for i in range(6):
        for j in range(i + 1):
            acc = a[6 * i + j]
            for k in range(j):
                acc -= l[6 * i + k] * l[6 * j + k]
            if i == j:
                if acc <= 0.0:
                    return 1
                l[6 * i + i] = sqrt(acc)
            else:
                l[6 * i + j] = acc / l[6 * j + j]
    return 0


cdef void _chol6_solve(const double* l, const double* b, double* x) noexcept nogil:
    cdef double z[6]
    cdef int i, k
    cdef double acc
    for i in range(6):
        acc = b[i]
        for k in range(i):
            acc -= l[6 * i + k] * z[k]
        z[i] = acc / l[6 * i + i]
    for i in range(5, -1, -1):
        acc = z[i]
        for k in range(i + 1, 6):
            acc -= l[6 * k + i] * x[k]
        x[i] = acc / l[6 * i + i]


cdef double _eval(const double* r, const double* t,
                  const double[:, ::1] locs, const double[:, ::1] refs,
                  const double[::1] dists,
                  double[:, ::1] e, double[::1] nrm, double[::1] rho,
                  Py_ssize_t n) noexcept nogil:
    cdef double f = 0.0
    cdef double ex, ey, ez, nv, rv
    cdef Py_ssize_t k
    for k in range(n):
        ex = r[0] * locs[k, 0] + r[1] * locs[k, 1] + r[2] * locs[k, 2] + t[0] - refs[k, 0]
        ey = r[3] * locs[k, 0] + r[4] * locs[k, 1] + r[5] * locs[k, 2] + t[1] - refs[k, 1]
        ez = r[6] * locs[k, 0] + r[7] * locs[k, 1] + r[8] * locs[k, 2] + t[2] - refs[k, 2]
        nv = sqrt(ex * ex + ey * ey + ez * ez)
        rv = dists[k] - nv
        e[k, 0] = ex
        e[k, 1] = ey
        e[k, 2] = ez
        nrm[k] = nv
        rho[k] = rv
        f += rv * rv
    return f


def refine_kernel(r0, t0, refs, locs, dists, double gtol, double ftol,
                  long max_iters, double eps_range, double c1, double shrink,
                  bint use_gn):
    """C twin of ``_refine_py.refine_kernel``; same contract."""
    refs_arr = np.ascontiguousarray(refs, dtype=np.float64)
    locs_arr = np.ascontiguousarray(locs, dtype=np.float64)
    dists_arr = np.ascontiguousarray(dists, dtype=np.float64)
    cdef Py_ssize_t n = refs_arr.shape[0]

    r0_arr = np.ascontiguousarray(r0, dtype=np.float64).reshape(9)
    t0_arr = np.asarray(t0, dtype=np.float64).reshape(3)

    cdef double[:, ::1] xr = refs_arr
    cdef double[:, ::1] q = locs_arr
    cdef double[::1] d = dists_arr

    e_arr = np.empty((n, 3))
    e2_arr = np.empty((n, 3))
    nrm_arr = np.empty(n)
    nrm2_arr = np.empty(n)
    rho_arr = np.empty(n)
    rho2_arr = np.empty(n)
    cdef double[:, ::1] e = e_arr
    cdef double[:, ::1] e2 = e2_arr
    cdef double[::1] nrm = nrm_arr
    cdef double[::1] nrm2 = nrm2_arr
    cdef double[::1] rho = rho_arr
    cdef double[::1] rho2 = rho2_arr

    objs_arr = np.empty(max_iters + 2)
    gnorms_arr = np.empty(max_iters + 2)
    steps_arr = np.empty(max_iters + 1)
    cdef double[::1] objs = objs_arr
    cdef double[::1] gnorms = gnorms_arr
    cdef double[::1] steps = steps_arr

    cdef double r[9]
    cdef double rn[9]
    cdef double btrial[9]
    cdef double rh[9]
    cdef double t[3]
    cdef double tn[3]
    cdef double g3[3]
    cdef double m_amb[9]
    cdef double m_tan[9]
    cdef double v[3]
    cdef double g6[6]
    cdef double d6[6]
    cdef double h6[36]
    cdef double l6[36]
    cdef double jrow[6]
    cdef int i, j, ci
    for i in range(9):
        r[i] = r0_arr[i]
    for i in range(3):
        t[i] = t0_arr[i]

    cdef double f = _eval(r, t, q, xr, d, e, nrm, rho, n)
    cdef double f_new = 0.0
    cdef double wk, gn_norm, slope, alpha, decrease, min_n, damp, tr_h
    cdef double alpha_prev = 1.0
    cdef long it = 0
    cdef long n_rec = 0
    cdef int status = 2
    cdef int pending = -1
    cdef bint accepted, gn_ok
    cdef Py_ssize_t k

    while True:
        min_n = nrm[0]
        for k in range(1, n):
            if nrm[k] < min_n:
                min_n = nrm[k]
        if min_n < eps_range:
            status = 4
            break

        # ambient gradients
        for i in range(3):
            g3[i] = 0.0
        for i in range(9):
            m_amb[i] = 0.0
        for k in range(n):
            wk = 2.0 * rho[k] / nrm[k]
            for i in range(3):
                g3[i] -= wk * e[k, i]
                for j in range(3):
                    m_amb[3 * i + j] -= wk * e[k, i] * q[k, j]
        _tangent(r, m_amb, m_tan)
        gn_norm = sqrt(_frob2(m_tan, 9) + _frob2(g3, 3))

        objs[n_rec] = f
        gnorms[n_rec] = gn_norm
        n_rec += 1

        if pending >= 0:
            status = pending
            break
        if gn_norm <= gtol:
            status = 0
            break
        if it >= max_iters:
            status = 2
            break

        # tangent-parameter gradient and Gauss-Newton system:
        # row_k = [ (R^T u_k) x q_k , -u_k ]
        for i in range(6):
            g6[i] = 0.0
        for i in range(36):
            h6[i] = 0.0
        for k in range(n):
            for i in range(3):
                v[i] = (r[i] * e[k, 0] + r[3 + i] * e[k, 1] + r[6 + i] * e[k, 2]) / nrm[k]
            jrow[0] = v[1] * q[k, 2] - v[2] * q[k, 1]
            jrow[1] = v[2] * q[k, 0] - v[0] * q[k, 2]
            jrow[2] = v[0] * q[k, 1] - v[1] * q[k, 0]
            jrow[3] = -e[k, 0] / nrm[k]
            jrow[4] = -e[k, 1] / nrm[k]
            jrow[5] = -e[k, 2] / nrm[k]
            for i in range(6):
                g6[i] += 2.0 * jrow[i] * rho[k]
                for j in range(6):
                    h6[6 * i + j] += 2.0 * jrow[i] * jrow[j]

        gn_ok = False
        if use_gn:
            tr_h = 0.0
            for i in range(6):
                tr_h += h6[6 * i + i]
            damp = GN_DAMP * tr_h / 6.0
            for i in range(6):
                h6[6 * i + i] += damp
            if _chol6(h6, l6) == 0:
                _chol6_solve(l6, g6, d6)
                slope = 0.0
                for i in range(6):
                    d6[i] = -d6[i]
                    slope += g6[i] * d6[i]
                if slope < 0.0:
                    gn_ok = True
            alpha = 1.0
        if not gn_ok:
            slope = 0.0
            for i in range(6):
                d6[i] = -g6[i]
                slope += g6[i] * d6[i]
            alpha = 1.0 if use_gn else min(1.0, 2.0 * alpha_prev)

        # rh = R @ hat(omega)
        rh[0] = r[1] * d6[2] - r[2] * d6[1]
        rh[1] = r[2] * d6[0] - r[0] * d6[2]
        rh[2] = r[0] * d6[1] - r[1] * d6[0]
        rh[3] = r[4] * d6[2] - r[5] * d6[1]
        rh[4] = r[5] * d6[0] - r[3] * d6[2]
        rh[5] = r[3] * d6[1] - r[4] * d6[0]
        rh[6] = r[7] * d6[2] - r[8] * d6[1]
        rh[7] = r[8] * d6[0] - r[6] * d6[2]
        rh[8] = r[6] * d6[1] - r[7] * d6[0]

        accepted = False
        while alpha >= ALPHA_FLOOR:
            for i in range(9):
                btrial[i] = r[i] + alpha * rh[i]
            if _polar3(btrial, rn) == 0:
                for i in range(3):
                    tn[i] = t[i] + alpha * d6[3 + i]
                f_new = _eval(rn, tn, q, xr, d, e2, nrm2, rho2, n)
                if f_new <= f + c1 * alpha * slope:
                    accepted = True
                    break
            alpha *= shrink
        if not accepted:
            status = 3
            break

        steps[it] = alpha
        alpha_prev = alpha
        it += 1
        decrease = f - f_new
        f = f_new
        for i in range(9):
            r[i] = rn[i]
        for i in range(3):
            t[i] = tn[i]
        for k in range(n):
            e[k, 0] = e2[k, 0]
            e[k, 1] = e2[k, 1]
            e[k, 2] = e2[k, 2]
            nrm[k] = nrm2[k]
            rho[k] = rho2[k]
        if decrease <= ftol * max(1.0, fabs(f)):
            pending = 1

    r_out = np.empty((3, 3))
    t_out = np.empty(3)
    for i in range(3):
        for j in range(3):
            r_out[i, j] = r[3 * i + j]
        t_out[i] = t[i]
    return (
        r_out,
        t_out,
        objs_arr[:n_rec].copy(),
        steps_arr[:it].copy(),
        gnorms_arr[:n_rec].copy(),
        status,
        it,
    )
