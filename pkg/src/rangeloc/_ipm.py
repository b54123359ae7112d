"""Dense primal-dual interior-point method for one small PSD block.

Solves
    minimize    <C, X>
    subject to  <Q_k, X> = b_k                 (equality rows)
                <G_j, X> <= h_j                (inequality rows, via slacks)
                X >= 0  (positive semidefinite)

The cone is a single dense PSD block plus a nonnegative orthant for the
inequality slacks. Directions use Nesterov-Todd scaling with a Mehrotra-style
predictor/corrector; the Schur complement is formed densely, which is the
right trade at this problem size (n = 17, a few dozen rows).

Linearly dependent equality rows are eliminated up front (with a consistency
check on their right-hand sides), since the redundant constraint set used by
the caller contains one exact dependency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, NumericalBreakdown

_EIG_FLOOR_REL = 1e-15
_STEP_FRAC = 0.98

__all__ = ["ConeOptions", "ConeSolution", "solve_cone"]


@dataclass
class ConeOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iters: int = 100
    step_frac: float = _STEP_FRAC


@dataclass
class ConeSolution:
    X: np.ndarray
    y: np.ndarray
    slack: np.ndarray
    status: str  # "optimal" | "max_iterations" | "stalled"
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    mu: float
    objective: float
    trace: dict = field(default_factory=dict)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _eigh_floored(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(m)
    floor = _EIG_FLOOR_REL * max(float(w[-1]), 1e-100)
    return np.maximum(w, floor), v


def _nt_scaling(x: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (W, S^-1) with W symmetric positive definite and W S W = X."""
    ws, vs = _eigh_floored(s)
    sq = np.sqrt(ws)
    s_half = (vs * sq) @ vs.T
    s_ihalf = (vs / sq) @ vs.T
    s_inv = (vs / ws) @ vs.T
    wt, vt = _eigh_floored(_sym(s_half @ x @ s_half))
    t_half = (vt * np.sqrt(wt)) @ vt.T
    return _sym(s_ihalf @ t_half @ s_ihalf), s_inv


def _max_step_psd(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha <= 1 keeping x + alpha*dx positive semidefinite."""
    w, v = _eigh_floored(x)
    ihalf = (v / np.sqrt(w)) @ v.T
    lam_min = float(np.linalg.eigvalsh(_sym(ihalf @ dx @ ihalf))[0])
    if lam_min >= -1e-14:
        return 1.0
    return min(1.0, -1.0 / lam_min)


def _max_step_nonneg(u: np.ndarray, du: np.ndarray) -> float:
    neg = du < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-u[neg] / du[neg])))


def _independent_rows(mats: np.ndarray, rhs: np.ndarray, tol: float = 1e-10):
    """Indices of a maximal independent subset of constraint rows.

    Raises Infeasible when a dependent row's right-hand side contradicts the
    rows it depends on.
    """
    m = mats.shape[0]
    vecs = mats.reshape(m, -1)
    keep: list[int] = []
    basis: list[np.ndarray] = []
    for i in range(m):
        v = vecs[i]
        nv = np.linalg.norm(v)
        if nv == 0.0:
            if abs(rhs[i]) > tol:
                raise Infeasible(f"constraint row {i} is 0 = {rhs[i]!r}")
            continue
        r = v.copy()
        for e in basis:
            r -= (e @ r) * e
        # second orthogonalization pass for numerical safety
        for e in basis:
            r -= (e @ r) * e
        nr = np.linalg.norm(r)
        if nr > tol * nv:
            keep.append(i)
            basis.append(r / nr)
        else:
            coef, *_ = np.linalg.lstsq(vecs[keep].T, v, rcond=None)
            implied = float(coef @ rhs[keep])
            scale = 1.0 + float(np.max(np.abs(rhs))) if len(rhs) else 1.0
            if abs(rhs[i] - implied) > 1e-8 * scale:
                raise Infeasible(
                    f"constraint row {i} is linearly dependent with an "
                    f"inconsistent right-hand side ({rhs[i]!r} vs {implied!r})"
                )
    return keep


def solve_cone(
    C: np.ndarray,
    eq_mats,
    eq_rhs,
    ineq_mats=(),
    ineq_rhs=(),
    opts: ConeOptions | None = None,
) -> ConeSolution:
    opts = opts or ConeOptions()
    C = _sym(np.asarray(C, dtype=float))
    n = C.shape[0]

    eq_mats = [np.asarray(q, dtype=float) for q in eq_mats]
    eq_rhs = np.asarray(eq_rhs, dtype=float)
    if len(eq_mats) == 0:
        raise ValueError("at least one equality constraint is required")
    keep = _independent_rows(np.stack(eq_mats), eq_rhs)
    kept_eq = [eq_mats[i] for i in keep]
    kept_rhs = eq_rhs[keep]

    ineq_mats = [np.asarray(g, dtype=float) for g in ineq_mats]
    p = len(ineq_mats)
    m_eq = len(kept_eq)
    m = m_eq + p

    mats = np.stack(kept_eq + ineq_mats)  # (m, n, n)
    b = np.concatenate([kept_rhs, np.asarray(ineq_rhs, dtype=float)]) if p else kept_rhs
    b_norm = np.linalg.norm(b)
    c_norm = np.linalg.norm(C)

    def a_op(x, u):
        vals = np.einsum("kij,ij->k", mats, x)
        if p:
            vals[m_eq:] += u
        return vals

    def at_op(y):
        return np.tensordot(y, mats, axes=(0, 0))

    x = np.eye(n) * max(1.0, float(np.max(np.abs(b))))
    s = np.eye(n) * max(1.0, c_norm / np.sqrt(n))
    y = np.zeros(m)
    u = np.full(p, max(1.0, float(np.max(np.abs(b)))))
    lam = np.ones(p)

    trace: dict[str, list] = {k: [] for k in ("pinf", "dinf", "gap", "mu", "sigma", "alpha_p", "alpha_d")}
    status = "max_iterations"
    it = 0
    tiny_steps = 0
    pinf = dinf = gap = mu = pobj = np.nan
    best = None  # (score, x, y, u, s, lam)

    for it in range(1, opts.max_iters + 1):
        rp = b - a_op(x, u)
        rd = _sym(C - s - at_op(y))
        rd_lp = -(lam + y[m_eq:]) if p else np.zeros(0)
        mu = (float(np.sum(x * s)) + (float(u @ lam) if p else 0.0)) / (n + p)
        pobj = float(np.sum(C * x))
        dobj = float(b @ y)
        pinf = float(np.linalg.norm(rp)) / (1.0 + b_norm)
        dinf = float(np.hypot(np.linalg.norm(rd), np.linalg.norm(rd_lp))) / (1.0 + c_norm)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))

        trace["pinf"].append(pinf)
        trace["dinf"].append(dinf)
        trace["gap"].append(gap)
        trace["mu"].append(mu)

        if not (np.isfinite(pinf) and np.isfinite(dinf) and np.isfinite(mu)):
            raise NumericalBreakdown("non-finite iterate residuals")
        score = max(pinf, dinf, gap)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), u.copy(), s.copy(), lam.copy())
        if pinf <= opts.tol_feas and dinf <= opts.tol_feas and gap <= opts.tol_gap:
            status = "optimal"
            it -= 1
            break

        try:
            w, s_inv = _nt_scaling(x, s)
        except np.linalg.LinAlgError:
            status = "stalled"
            break
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(s_inv))):
            status = "stalled"
            break
        wqw = np.matmul(w, np.matmul(mats, w))
        schur = _sym(np.tensordot(wqw, mats, axes=([1, 2], [1, 2])))
        if p:
            w2 = u / lam
            idx = np.arange(m_eq, m)
            schur[idx, idx] += w2
            lam_inv = 1.0 / lam
        else:
            w2 = lam_inv = np.zeros(0)

        jitter = 0.0
        base = float(np.trace(schur)) / m
        for attempt in range(8):
            try:
                sf = np.linalg.cholesky(schur + jitter * np.eye(m))
                break
            except np.linalg.LinAlgError:
                jitter = base * 10.0 ** (attempt - 13)
        else:
            raise NumericalBreakdown("Schur complement factorization failed")

        def schur_solve(rhs):
            z = np.linalg.solve(sf, rhs)
            return np.linalg.solve(sf.T, z)

        w_rd_w = _sym(w @ rd @ w)
        a_sinv = np.einsum("kij,ij->k", mats, s_inv)
        a_wrdw = np.einsum("kij,ij->k", mats, w_rd_w)
        extra_sigma = np.zeros(m)
        extra_rd = np.zeros(m)
        if p:
            extra_sigma[m_eq:] = lam_inv
            extra_rd[m_eq:] = w2 * rd_lp

        def directions(sigma_mu):
            rhs = b - sigma_mu * (a_sinv + extra_sigma) + a_wrdw + extra_rd
            dy = schur_solve(rhs)
            ds = _sym(rd - at_op(dy))
            dx = _sym(sigma_mu * s_inv - x - w @ ds @ w)
            if p:
                dlam = rd_lp - dy[m_eq:]
                du = sigma_mu * lam_inv - u - w2 * dlam
            else:
                dlam = du = np.zeros(0)
            return dx, dy, ds, du, dlam

        try:
            dx_a, dy_a, ds_a, du_a, dl_a = directions(0.0)
            ap_a = min(_max_step_psd(x, dx_a), _max_step_nonneg(u, du_a) if p else 1.0)
            ad_a = min(_max_step_psd(s, ds_a), _max_step_nonneg(lam, dl_a) if p else 1.0)
        except np.linalg.LinAlgError:
            status = "stalled"
            break
        if not (np.isfinite(ap_a) and np.isfinite(ad_a)):
            status = "stalled"
            break
        mu_aff = (
            float(np.sum((x + ap_a * dx_a) * (s + ad_a * ds_a)))
            + (float((u + ap_a * du_a) @ (lam + ad_a * dl_a)) if p else 0.0)
        ) / (n + p)
        sigma = min(1.0, max(0.0, (max(mu_aff, 0.0) / mu) ** 3))
        trace["sigma"].append(sigma)

        try:
            dx, dy, ds, du, dlam = directions(sigma * mu)
            alpha_p = min(
                1.0,
                opts.step_frac
                * min(_max_step_psd(x, dx), _max_step_nonneg(u, du) if p else 1.0),
            )
            alpha_d = min(
                1.0,
                opts.step_frac
                * min(_max_step_psd(s, ds), _max_step_nonneg(lam, dlam) if p else 1.0),
            )
        except np.linalg.LinAlgError:
            status = "stalled"
            break
        if not np.all(np.isfinite(dx)) or not np.all(np.isfinite(ds)):
            status = "stalled"
            break
        trace["alpha_p"].append(alpha_p)
        trace["alpha_d"].append(alpha_d)

        x = _sym(x + alpha_p * dx)
        y = y + alpha_d * dy
        s = _sym(s + alpha_d * ds)
        if p:
            u = u + alpha_p * du
            lam = lam + alpha_d * dlam

        if max(alpha_p, alpha_d) < 1e-8:
            tiny_steps += 1
            if tiny_steps >= 3:
                status = "stalled"
                break
        else:
            tiny_steps = 0

    # fall back to the best recorded iterate when the last one is worse
    # (stalls near the numerical floor can end on a degraded point)
    if status != "optimal" and best is not None:
        rp = b - a_op(x, u)
        rd = _sym(C - s - at_op(y))
        rd_lp = -(lam + y[m_eq:]) if p else np.zeros(0)
        cur = max(
            float(np.linalg.norm(rp)) / (1.0 + b_norm),
            float(np.hypot(np.linalg.norm(rd), np.linalg.norm(rd_lp))) / (1.0 + c_norm),
        )
        if not np.isfinite(cur) or cur > best[0]:
            _, x, y, u, s, lam = best

    # refresh exit-time residuals
    rp = b - a_op(x, u)
    rd = _sym(C - s - at_op(y))
    rd_lp = -(lam + y[m_eq:]) if p else np.zeros(0)
    pinf = float(np.linalg.norm(rp)) / (1.0 + b_norm)
    dinf = float(np.hypot(np.linalg.norm(rd), np.linalg.norm(rd_lp))) / (1.0 + c_norm)
    pobj = float(np.sum(C * x))
    gap = abs(pobj - float(b @ y)) / (1.0 + abs(pobj) + abs(float(b @ y)))
    mu = (float(np.sum(x * s)) + (float(u @ lam) if p else 0.0)) / (n + p)

    return ConeSolution(
        X=x,
        y=y,
        slack=u,
        status=status,
        iterations=it,
        primal_residual=pinf,
        dual_residual=dinf,
        gap=gap,
        mu=mu,
        objective=pobj,
        trace=trace,
    )
