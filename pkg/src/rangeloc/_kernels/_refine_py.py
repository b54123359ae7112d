"""Pure-numpy refinement kernel (fallback backend).

Minimizes the sum of squared range residuals over (R, T). The rotation is
updated multiplicatively, R <- polar(R (I + hat(alpha * w))), which keeps the
trial matrix at positive determinant for any step, and the polar projection
retracts it to the manifold. An Armijo backtracking line search controls the
step.

Two search directions are available. ``gauss_newton`` (default) solves the
damped 6x6 normal equations of the residual Jacobian in the tangent
parameters (w, dT); it converges quadratically near zero-residual optima and
handles the poor conditioning that kilometer-scale geometry induces.
``flow`` follows the raw projected gradient, the literal discretization of
the gradient flow; it is kept for reference and for the property tests.
Stationary points are identical for both.
"""

from __future__ import annotations

import numpy as np

_ALPHA_FLOOR = 1e-20
_GN_DAMP = 1e-10


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _polar_rotation(b: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of b (det(b) > 0 by construction here)."""
    u, _, vt = np.linalg.svd(b)
    r = u @ vt
    if np.linalg.det(r) < 0.0:  # unreachable for det(b) > 0; belt and braces
        r = (u * np.array([1.0, 1.0, -1.0])) @ vt
    return r


def _tangent(r: np.ndarray, m: np.ndarray) -> np.ndarray:
    return 0.5 * m - 0.5 * (r @ m.T @ r)


def refine_kernel(
    r0: np.ndarray,
    t0: np.ndarray,
    refs: np.ndarray,
    locs: np.ndarray,
    dists: np.ndarray,
    gtol: float,
    ftol: float,
    max_iters: int,
    eps_range: float,
    c1: float,
    shrink: float,
    use_gn: bool,
):
    """Run the descent; see the package docstring for the status codes.

    Returns (R, T, objectives, step_sizes, gradient_norms, status, n_steps).
    Trace arrays cover every visited iterate including the final one.
    """
    r = np.array(r0, dtype=float)
    t = np.array(t0, dtype=float)
    n = len(dists)

    def evaluate(rm, tv):
        e = locs @ rm.T + tv - refs
        nrm = np.sqrt(np.sum(e * e, axis=1))
        rho = dists - nrm
        return float(rho @ rho), e, nrm, rho

    f, e, nrm, rho = evaluate(r, t)

    objs: list[float] = []
    gnorms: list[float] = []
    steps: list[float] = []
    status = 2
    pending = -1
    alpha_prev = 1.0
    it = 0

    while True:
        if float(np.min(nrm)) < eps_range:
            status = 4
            break
        u = e / nrm[:, None]
        w = rho / nrm
        g_t = -2.0 * (w[:, None] * e).sum(axis=0)
        m_amb = -2.0 * (w[:, None] * e).T @ locs
        m_tan = _tangent(r, m_amb)
        gn_norm = float(np.hypot(np.linalg.norm(m_tan), np.linalg.norm(g_t)))

        objs.append(f)
        gnorms.append(gn_norm)

        if pending >= 0:
            status = pending
            break
        if gn_norm <= gtol:
            status = 0
            break
        if it >= max_iters:
            status = 2
            break

        # residual Jacobian in tangent parameters (w, dT)
        jac = np.empty((n, 6))
        for k in range(n):
            jac[k, :3] = u[k] @ r @ _hat(locs[k])
            jac[k, 3:] = -u[k]
        g6 = 2.0 * jac.T @ rho

        if use_gn:
            h = 2.0 * jac.T @ jac
            damp = _GN_DAMP * float(np.trace(h)) / 6.0
            try:
                d6 = -np.linalg.solve(h + damp * np.eye(6), g6)
            except np.linalg.LinAlgError:
                d6 = -g6
            slope = float(g6 @ d6)
            if slope >= 0.0:
                d6 = -g6
                slope = float(g6 @ d6)
            alpha = 1.0
        else:
            d6 = -g6
            slope = float(g6 @ d6)
            alpha = min(1.0, 2.0 * alpha_prev)

        omega_hat = _hat(d6[:3])
        accepted = False
        while alpha >= _ALPHA_FLOOR:
            r_new = _polar_rotation(r + r @ (alpha * omega_hat))
            t_new = t + alpha * d6[3:]
            f_new, e_new, nrm_new, rho_new = evaluate(r_new, t_new)
            if f_new <= f + c1 * alpha * slope:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            status = 3
            break

        steps.append(alpha)
        alpha_prev = alpha
        it += 1
        decrease = f - f_new
        r, t, f, e, nrm, rho = r_new, t_new, f_new, e_new, nrm_new, rho_new
        if decrease <= ftol * max(1.0, abs(f)):
            pending = 1

    return (
        r,
        t,
        np.asarray(objs),
        np.asarray(steps),
        np.asarray(gnorms),
        status,
        it,
    )
