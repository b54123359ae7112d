"""Semidefinite relaxation of the distance-only transform estimation problem.

Each squared range measurement is linear in the 16 lifted unknowns, giving a
row A[k] and right-hand side b[k] = d^2 - ||p_ref||^2 - ||p_local||^2. The
least-squares cost ||A theta - b||^2 becomes <P, X> on the 17x17 lifted
variable X = [theta; -1][theta; -1]^T with P = [A b]^T [A b], and the
quadratic consistency constraints become linear trace constraints
<Q_i, X> = q_i. Dropping rank(X) = 1 leaves a small dense SDP which is solved
with the interior-point engine in ``_ipm``; the solution is rounded back to a
theta estimate through its leading eigenpair.

Kilometer-scale coordinates make the raw lifted variable span many orders of
magnitude, so the solver internally rescales lengths by a characteristic
scale carried on the ``LinearSystem``; the constraint matrices are invariant
under that rescaling (each constraint is homogeneous in length), and the
returned ``X`` is reported in raw units.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import _ipm
from .errors import (
    DegenerateSpectrum,
    EmptyMeasurements,
    Infeasible,
    UnderDeterminedWarning,
)
from .geometry import (
    CONSTRAINT_TERMS,
    EXTENDED_IDENTITY_TERMS,
    Measurement,
    ThetaVector,
    constraint_residuals,
    measurement_arrays,
)

MIN_MEASUREMENTS = 7

__all__ = [
    "MIN_MEASUREMENTS",
    "LinearSystem",
    "ConstraintSet",
    "SdpOptions",
    "SdpSolution",
    "assemble_row",
    "assemble_system",
    "constraint_matrices",
    "solve_sdp",
    "solve_linear",
    "extract_rank1",
    "extract_candidates",
    "polish_theta",
    "rank_diagnostic",
    "dump_problem",
    "load_problem",
]


@dataclass(frozen=True)
class LinearSystem:
    """Stacked measurement rows and the Gram cost matrix P = [A b]^T [A b].

    ``scale`` is a characteristic length of the instance (meters) used to
    equilibrate the lifted problem before solving; 1.0 for dimensionless data.
    """

    A: np.ndarray  # (N, 16)
    b: np.ndarray  # (N,)
    P: np.ndarray  # (17, 17), symmetric PSD
    scale: float = 1.0

    @property
    def n_measurements(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ConstraintSet:
    """Equality pairs (Q_i, q_i) encoding <Q_i, X> = q_i, plus optional
    inequality pairs (G_j, h_j) encoding <G_j, X> <= h_j."""

    equalities: tuple
    inequalities: tuple = ()
    labels: tuple = ()

    def __len__(self) -> int:
        return len(self.equalities)


@dataclass
class SdpOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iters: int = 100
    rank_tol: float = 1e-8
    eps_corner: float = 1e-6
    normalize_objective: bool = True


@dataclass
class SdpSolution:
    """Relaxation output. ``X`` is in raw units; residuals, gap and
    ``sv_ratio`` are measured on the internally rescaled problem, where the
    tolerances are meaningful. ``scale`` is the length scale used."""

    X: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    sv_ratio: float
    objective: float
    objective_normalized: float
    status: str
    scale: float = 1.0
    trace: dict = field(default_factory=dict)

    def scaled_X(self) -> np.ndarray:
        f17 = np.concatenate([_theta_scale_vector(self.scale), [1.0]])
        return self.X / np.outer(f17, f17)


def assemble_row(m: Measurement) -> tuple[np.ndarray, float]:
    """Coefficient row and right-hand side of one squared range equation.

    In theta order the coefficients are -2*x_i*y_j for the r_ij slots,
    -2*x_i for the translation slots, +2*y_j for the three column-product
    slots, and +1 for the squared-norm slot.
    """
    x = m.p_ref.as_array()
    y = m.p_local.as_array()
    row = np.empty(16)
    row[0:9] = -2.0 * np.outer(x, y).reshape(9)
    row[9:12] = -2.0 * x
    row[12:15] = 2.0 * y
    row[15] = 1.0
    b = m.distance * m.distance - x @ x - y @ y
    return row, float(b)


def assemble_system(ms: Sequence[Measurement]) -> LinearSystem:
    """Stack measurement rows (input order) and form the cost matrix."""
    if len(ms) == 0:
        raise EmptyMeasurements("cannot assemble a system from no measurements")
    n = len(ms)
    a = np.empty((n, 16))
    b = np.empty(n)
    for k, m in enumerate(ms):
        a[k], b[k] = assemble_row(m)
    ab = np.hstack([a, b[:, None]])
    p = ab.T @ ab
    p = 0.5 * (p + p.T)

    _, refs, locs, dists = measurement_arrays(ms)
    scale = max(
        float(np.sqrt(np.mean(refs * refs))) if n else 0.0,
        float(np.sqrt(np.mean(locs * locs))),
        float(np.sqrt(np.mean(dists * dists))),
    )
    if not scale > 0.0:
        scale = 1.0
    return LinearSystem(A=a, b=b, P=p, scale=scale)


def _constraint_matrix(terms) -> tuple[np.ndarray, float]:
    """Lift one quadratic constraint into a (Q, q) trace pair.

    A monomial theta_a * theta_b maps to the symmetric X entry pair (a, b);
    a linear theta_a term maps to the corner column where X[a, 17] = -theta_a;
    the constant moves to the right-hand side.
    """
    quad, lin, const = terms
    q = np.zeros((17, 17))
    for coef, a, b in quad:
        if a == b:
            q[a - 1, a - 1] += coef
        else:
            q[a - 1, b - 1] += 0.5 * coef
            q[b - 1, a - 1] += 0.5 * coef
    for coef, a in lin:
        q[a - 1, 16] += -0.5 * coef
        q[16, a - 1] += -0.5 * coef
    return q, -const


def constraint_matrices(
    include_redundant: bool = True,
    include_rlt: bool = False,
    include_extended: bool = True,
) -> ConstraintSet:
    """Build the lifted constraint set.

    Always includes the 10 independent consistency constraints and the corner
    normalization X[17,17] = 1. ``include_redundant`` appends the four
    implied constraints (they tighten the relaxation toward low rank);
    ``include_extended`` appends the remaining valid rotation identities (row
    orthogonality, cross-product structure, R @ (R^T T) = T), which are
    independent linear conditions on X and shrink the optimal face further;
    ``include_rlt`` appends |X[a,17]| <= 1 and X[a,a] <= 1 for the nine
    rotation slots. Linearly dependent rows are eliminated by the solver.
    """
    n_cons = len(CONSTRAINT_TERMS) if include_redundant else 10
    eqs = []
    labels = []
    for i in range(n_cons):
        eqs.append(_constraint_matrix(CONSTRAINT_TERMS[i]))
        labels.append(f"C{i + 1}")
    corner = np.zeros((17, 17))
    corner[16, 16] = 1.0
    eqs.append((corner, 1.0))
    labels.append("corner")
    if include_extended:
        for i, terms in enumerate(EXTENDED_IDENTITY_TERMS):
            eqs.append(_constraint_matrix(terms))
            labels.append(f"X{i + 1}")

    ineqs = []
    if include_rlt:
        for a in range(9):
            g = np.zeros((17, 17))
            g[a, 16] = g[16, a] = 0.5
            ineqs.append((g, 1.0))  # X[a,16] <= 1
            ineqs.append((-g, 1.0))  # -X[a,16] <= 1
            labels.append(f"rlt_corner_{a + 1}")
            g2 = np.zeros((17, 17))
            g2[a, a] = 1.0
            ineqs.append((g2, 1.0))  # X[a,a] <= 1
            labels.append(f"rlt_diag_{a + 1}")

    return ConstraintSet(
        equalities=tuple(eqs), inequalities=tuple(ineqs), labels=tuple(labels)
    )


def _theta_scale_vector(scale: float) -> np.ndarray:
    s = np.ones(16)
    s[9:15] = scale
    s[15] = scale * scale
    return s


def solve_sdp(
    sys: LinearSystem,
    cons: ConstraintSet | None = None,
    opts: SdpOptions | None = None,
) -> SdpSolution:
    """Solve the relaxation; returns the PSD solution and diagnostics.

    Warns with UnderDeterminedWarning when fewer than 7 measurements inform
    the cost. Raises Infeasible when the constraint set cannot be met and
    NumericalBreakdown on unrecoverable factorization failure; when the
    iteration limit is hit, the best iterate is returned with
    ``status="max_iterations"``.
    """
    cons = cons if cons is not None else constraint_matrices()
    opts = opts or SdpOptions()

    n = sys.n_measurements
    if n < MIN_MEASUREMENTS:
        warnings.warn(
            f"{n} measurement(s) < {MIN_MEASUREMENTS}: the relaxation may pick "
            "an arbitrary transform consistent with the data",
            UnderDeterminedWarning,
            stacklevel=2,
        )

    scale = sys.scale if sys.scale > 0 else 1.0
    s16 = _theta_scale_vector(scale)
    a_sc = sys.A * s16[None, :] / (scale * scale)
    b_sc = sys.b / (scale * scale)
    ab = np.hstack([a_sc, b_sc[:, None]])
    p_sc = ab.T @ ab
    p_sc = 0.5 * (p_sc + p_sc.T)
    tr = float(np.trace(p_sc))
    norm_factor = tr if (opts.normalize_objective and tr > 0.0) else 1.0
    c = p_sc / norm_factor

    eq_mats = [q for q, _ in cons.equalities]
    eq_rhs = [v for _, v in cons.equalities]
    ineq_mats = [g for g, _ in cons.inequalities]
    ineq_rhs = [h for _, h in cons.inequalities]

    cone = _ipm.solve_cone(
        c,
        eq_mats,
        eq_rhs,
        ineq_mats,
        ineq_rhs,
        _ipm.ConeOptions(
            tol_feas=opts.tol_feas, tol_gap=opts.tol_gap, max_iters=opts.max_iters
        ),
    )

    if cone.status != "optimal" and cone.primal_residual > np.sqrt(opts.tol_feas):
        raise Infeasible(
            f"equality residual {cone.primal_residual:.3e} after "
            f"{cone.iterations} iterations"
        )

    x_sc = cone.X
    eigs = np.sort(np.linalg.eigvalsh(x_sc))[::-1]
    sigma1 = float(max(eigs[0], 0.0))
    sigma2 = float(max(eigs[1], 0.0))
    sv_ratio = sigma1 / sigma2 if sigma2 > 0.0 else float("inf")

    f17 = np.concatenate([s16, [1.0]])
    x_raw = x_sc * np.outer(f17, f17)

    return SdpSolution(
        X=x_raw,
        iterations=cone.iterations,
        primal_residual=cone.primal_residual,
        dual_residual=cone.dual_residual,
        gap=cone.gap,
        sv_ratio=sv_ratio,
        objective=float(np.einsum("ij,ij->", sys.P, x_raw)),
        objective_normalized=cone.objective,
        status=cone.status,
        scale=scale,
        trace=cone.trace,
    )


def solve_linear(sys: LinearSystem) -> ThetaVector:
    """Plain least-squares route: solve A theta = b ignoring the quadratic
    consistency constraints (needs ~16 well-conditioned rows)."""
    scale = sys.scale if sys.scale > 0 else 1.0
    s16 = _theta_scale_vector(scale)
    a_sc = sys.A * s16[None, :] / (scale * scale)
    b_sc = sys.b / (scale * scale)
    theta_sc, *_ = np.linalg.lstsq(a_sc, b_sc, rcond=None)
    return ThetaVector(theta_sc * s16)


def extract_rank1(x: np.ndarray, eps_corner: float = 1e-6) -> tuple[ThetaVector, float]:
    """Best rank-1 rounding of a PSD solution.

    Takes the leading eigenpair, rescales the lifted vector so its corner
    entry is exactly -1, and returns the first 16 entries together with the
    leading-to-second eigenvalue ratio.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (17, 17):
        raise ValueError(f"expected a 17x17 matrix, got {x.shape}")
    xs = 0.5 * (x + x.T)
    vals, vecs = np.linalg.eigh(xs)
    sigma1 = float(vals[-1])
    sigma2 = float(max(vals[-2], 0.0))
    if sigma1 <= 0.0:
        raise DegenerateSpectrum("matrix has no positive leading eigenvalue")
    lead = np.sqrt(sigma1) * vecs[:, -1]
    corner = float(lead[16])
    if abs(corner) < eps_corner:
        raise DegenerateSpectrum(
            f"leading eigenvector corner {corner:.3e} below {eps_corner:.1e}; "
            "cannot normalize the lifted vector"
        )
    theta_full = lead * (-1.0 / corner)
    ratio = sigma1 / sigma2 if sigma2 > 0.0 else float("inf")
    return ThetaVector(theta_full[:16]), ratio


def extract_candidates(
    sol: SdpSolution,
    n_random: int = 8,
    seed: int = 0,
    eps_corner: float = 1e-6,
    eig_floor: float = 1e-7,
) -> list[ThetaVector]:
    """Candidate lifted vectors from the top eigenspace of the solution.

    When the relaxation has a flat optimal face (few measurements), its
    solution is a mixture of lifted points and the true vector lies in the
    span of the leading eigenvectors rather than along the single leading
    one. Candidates are the individual leading eigenvectors plus seeded
    random unit mixtures of them, each corner-normalized; degenerate corners
    are skipped. Deterministic given ``seed``.
    """
    x_sc = sol.scaled_X()
    vals, vecs = np.linalg.eigh(0.5 * (x_sc + x_sc.T))
    lead = float(vals[-1])
    if lead <= 0.0:
        raise DegenerateSpectrum("solution has no positive leading eigenvalue")
    r_eff = int(np.sum(vals > eig_floor * lead))
    weighted = vecs[:, -r_eff:] * np.sqrt(np.maximum(vals[-r_eff:], 0.0))

    cands_sc = [weighted[:, -1]]
    for i in range(2, min(3, r_eff) + 1):
        cands_sc.append(weighted[:, -i])
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        c = rng.standard_normal(r_eff)
        cands_sc.append(weighted @ (c / np.linalg.norm(c)))

    s16 = _theta_scale_vector(sol.scale)
    out = []
    for v in cands_sc:
        corner = float(v[16])
        if abs(corner) < eps_corner:
            continue
        out.append(ThetaVector(v[:16] * (-1.0 / corner) * s16))
    if not out:
        raise DegenerateSpectrum("all candidate corners below eps_corner")
    return out


def _constraint_jacobian(theta: np.ndarray) -> np.ndarray:
    jac = np.zeros((len(CONSTRAINT_TERMS), 16))
    for i, (quad, lin, _) in enumerate(CONSTRAINT_TERMS):
        for coef, a, b in quad:
            if a == b:
                jac[i, a - 1] += 2.0 * coef * theta[a - 1]
            else:
                jac[i, a - 1] += coef * theta[b - 1]
                jac[i, b - 1] += coef * theta[a - 1]
        for coef, a in lin:
            jac[i, a - 1] += coef
    return jac


def polish_theta(
    theta: ThetaVector,
    sys: LinearSystem,
    max_iters: int = 25,
    tol: float = 1e-24,
) -> ThetaVector:
    """Damped Gauss-Newton polish of a rounded candidate on the lifted system
    [consistency residuals; measurement residuals], in normalized units.

    Rounding a non-rank-1 relaxation solution leaves the candidate slightly
    (or badly) inconsistent; a few Newton steps on the original polynomial
    system pull it onto the consistent variety when the candidate is in the
    root's basin. Returns the polished vector (or the best iterate found).
    """
    scale = sys.scale if sys.scale > 0 else 1.0
    s16 = _theta_scale_vector(scale)
    a_sc = sys.A * s16[None, :] / (scale * scale)
    b_sc = sys.b / (scale * scale)
    th = theta.values / s16

    def residuals(t):
        # consistency residuals are evaluated in the same normalized units
        # as the measurement rows (they are length-homogeneous)
        c_sc = constraint_residuals(ThetaVector(t))
        return np.concatenate([c_sc, a_sc @ t - b_sc])

    res = residuals(th)
    f = float(res @ res)
    for _ in range(max_iters):
        if f < tol:
            break
        jac = np.vstack([_constraint_jacobian(th), a_sc])
        h = jac.T @ jac
        damp = 1e-12 * float(np.trace(h)) / 16.0
        try:
            step = np.linalg.solve(h + damp * np.eye(16), -jac.T @ res)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        improved = False
        while alpha > 1e-12:
            t_new = th + alpha * step
            r_new = residuals(t_new)
            f_new = float(r_new @ r_new)
            if f_new < f:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        th, res, f = t_new, r_new, f_new
    return ThetaVector(th * s16)


def rank_diagnostic(sys: LinearSystem, rank_tol: float = 1e-8) -> tuple[int, float]:
    """Numerical rank of the cost matrix and the conditioning of its
    numerically nonzero block.

    Computed on the length-normalized system so the answer reflects geometry
    rather than unit choices (rank is scale-invariant in exact arithmetic).
    """
    scale = sys.scale if sys.scale > 0 else 1.0
    s16 = _theta_scale_vector(scale)
    ab = np.hstack(
        [sys.A * s16[None, :] / (scale * scale), (sys.b / (scale * scale))[:, None]]
    )
    sv = np.linalg.svd(ab, compute_uv=False)
    spec = sv * sv  # spectrum of the scaled P
    if spec.size == 0 or spec[0] == 0.0:
        return 0, 1.0
    thresh = rank_tol * spec[0]
    rank = int(np.sum(spec > thresh))
    condition = float(spec[0] / spec[rank - 1]) if rank > 0 else 1.0
    return rank, condition


def _write_matrix(stream: TextIO, m: np.ndarray) -> None:
    for row in m:
        stream.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def dump_problem(
    sys: LinearSystem, cons: ConstraintSet, stream: TextIO
) -> None:
    """Write (P, Q_i, q_i, G_j, h_j) in a plain-text format for cross-checks.

    Format: a header line ``rangeloc-sdp 1``; then ``P <n>`` followed by n
    rows of n floats; then ``EQ <count>`` and for each equality a line
    ``Q <n> <q_i>`` followed by the matrix rows; then ``INEQ <count>`` with
    ``G <n> <h_j>`` blocks. Floats are written with 17 significant digits.
    """
    n = sys.P.shape[0]
    stream.write("rangeloc-sdp 1\n")
    stream.write(f"P {n}\n")
    _write_matrix(stream, sys.P)
    stream.write(f"EQ {len(cons.equalities)}\n")
    for q, rhs in cons.equalities:
        stream.write(f"Q {n} {rhs:.17g}\n")
        _write_matrix(stream, q)
    stream.write(f"INEQ {len(cons.inequalities)}\n")
    for g, rhs in cons.inequalities:
        stream.write(f"G {n} {rhs:.17g}\n")
        _write_matrix(stream, g)


def _read_matrix(lines: list[str], pos: int, n: int) -> tuple[np.ndarray, int]:
    rows = [np.fromstring(lines[pos + i], sep=" ") for i in range(n)]
    return np.vstack(rows), pos + n


def load_problem(stream: TextIO):
    """Inverse of :func:`dump_problem`; returns (P, equalities, inequalities)."""
    lines = stream.read().splitlines()
    if not lines or not lines[0].startswith("rangeloc-sdp"):
        raise ValueError("not a rangeloc SDP dump")
    pos = 1
    tag, n_str = lines[pos].split()
    assert tag == "P"
    n = int(n_str)
    p, pos = _read_matrix(lines, pos + 1, n)
    _, count = lines[pos].split()
    pos += 1
    eqs = []
    for _ in range(int(count)):
        _, n_str, rhs = lines[pos].split()
        q, pos = _read_matrix(lines, pos + 1, int(n_str))
        eqs.append((q, float(rhs)))
    _, count = lines[pos].split()
    pos += 1
    ineqs = []
    for _ in range(int(count)):
        _, n_str, rhs = lines[pos].split()
        g, pos = _read_matrix(lines, pos + 1, int(n_str))
        ineqs.append((g, float(rhs)))
    return p, eqs, ineqs


def dumps_problem(sys: LinearSystem, cons: ConstraintSet) -> str:
    buf = io.StringIO()
    dump_problem(sys, cons, buf)
    return buf.getvalue()
