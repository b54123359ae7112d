"""Maximum-likelihood refinement of the rigid transform.

The estimator minimizes the sum of squared range residuals

    f(R, T) = sum_k ( z[k] - ||R p_local[k] + T - p_ref[k]|| )^2

over rotations R and translations T, which is the MLE under independent
zero-mean Gaussian range noise. The rotation gradient is projected onto the
tangent space of SO(3) at R (M_T = M/2 - R M^T R / 2) and the descent is a
discretized gradient flow with Armijo backtracking; every rotation update is
retracted to the manifold through the nearest-rotation projection. The inner
loop runs in a kernel backend (compiled when available, numpy otherwise).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import STATUS_NAMES, get_kernel
from .errors import DegenerateRange, EmptyMeasurements, InvalidSigma, UnderDeterminedWarning
from .geometry import Measurement, Point3, Rotation, measurement_arrays
from .sdp import MIN_MEASUREMENTS

__all__ = [
    "MleObjective",
    "RefineOptions",
    "RefinementTrace",
    "objective",
    "log_likelihood",
    "euclidean_gradients",
    "project_tangent",
    "refine",
]


class MleObjective:
    """Measurement set (and optional noise level) defining the MLE cost.

    ``sigma`` only shifts the log-likelihood; the minimizer is sigma-free.
    """

    def __init__(self, measurements: Sequence[Measurement], sigma: float = 1.0):
        if len(measurements) == 0:
            raise EmptyMeasurements("MLE objective needs at least one measurement")
        self.measurements = list(measurements)
        self.sigma = float(sigma)
        _, self.refs, self.locs, self.dists = measurement_arrays(self.measurements)

    def __len__(self) -> int:
        return len(self.measurements)


@dataclass
class RefineOptions:
    gtol: float = 1e-10  # scaled internally by N and mean distance
    ftol: float = 1e-14
    max_iters: int = 5000
    eps_range: float = 1e-9
    armijo_c1: float = 1e-4
    shrink: float = 0.5
    direction: str = "gauss_newton"  # or "flow" (raw projected gradient)
    backend: str = "auto"


@dataclass
class RefinementTrace:
    """Per-iterate objective values, accepted step sizes, gradient norms, and
    why the loop stopped. The objective sequence is non-increasing."""

    objectives: np.ndarray
    step_sizes: np.ndarray
    gradient_norms: np.ndarray
    termination: str
    iterations: int
    gtol_effective: float = field(default=float("nan"))


def _as_matrix(r) -> np.ndarray:
    if isinstance(r, Rotation):
        return r.matrix
    m = np.asarray(r, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix or Rotation, got shape {m.shape}")
    return m


def _as_vector(t) -> np.ndarray:
    if isinstance(t, Point3):
        return t.as_array()
    return np.asarray(t, dtype=float).reshape(3)


def _residual_geometry(r, t, obj: MleObjective):
    e = obj.locs @ _as_matrix(r).T + _as_vector(t) - obj.refs
    nrm = np.linalg.norm(e, axis=1)
    return e, nrm


def objective(r, t, obj: MleObjective) -> float:
    """Sum of squared range residuals at (r, t); zero iff every predicted
    distance matches its measurement."""
    _, nrm = _residual_geometry(r, t, obj)
    rho = obj.dists - nrm
    return float(rho @ rho)


def log_likelihood(r, t, obj: MleObjective) -> float:
    """Gaussian log-likelihood of the measured ranges at (r, t)."""
    if obj.sigma <= 0.0:
        raise InvalidSigma(f"sigma must be positive, got {obj.sigma}")
    n = len(obj)
    return -objective(r, t, obj) / (2.0 * obj.sigma**2) - n * math.log(
        obj.sigma * math.sqrt(2.0 * math.pi)
    )


def euclidean_gradients(
    r, t, obj: MleObjective, eps_range: float = 1e-9
) -> tuple[np.ndarray, np.ndarray]:
    """Unconstrained gradients of the objective in R^{3x3} x R^3.

    Raises DegenerateRange when a predicted range is below ``eps_range``
    (the residual direction is undefined there).
    """
    e, nrm = _residual_geometry(r, t, obj)
    if float(np.min(nrm)) < eps_range:
        raise DegenerateRange(
            f"predicted range {float(np.min(nrm)):.3e} below {eps_range:.1e}"
        )
    w = (obj.dists - nrm) / nrm
    grad_t = -2.0 * (w[:, None] * e).sum(axis=0)
    grad_r = -2.0 * (w[:, None] * e).T @ obj.locs
    return grad_r, grad_t


def project_tangent(r, m) -> np.ndarray:
    """Project an ambient gradient onto the tangent space of SO(3) at r."""
    rm = _as_matrix(r)
    m = np.asarray(m, dtype=float)
    return 0.5 * m - 0.5 * (rm @ m.T @ rm)


def refine(
    r0: Rotation,
    t0: Point3,
    obj: MleObjective,
    opts: RefineOptions | None = None,
) -> tuple[Rotation, Point3, RefinementTrace]:
    """Descend the MLE cost from (r0, t0); returns the refined transform and
    the iteration trace. The final objective never exceeds the initial one."""
    opts = opts or RefineOptions()
    n = len(obj)
    if n < MIN_MEASUREMENTS:
        warnings.warn(
            f"{n} measurement(s) < {MIN_MEASUREMENTS}: the refined transform "
            "fits the data but may be far from the truth",
            UnderDeterminedWarning,
            stacklevel=2,
        )

    if opts.direction not in ("gauss_newton", "flow"):
        raise ValueError(f"unknown refine direction {opts.direction!r}")
    mean_dist = float(np.mean(np.abs(obj.dists)))
    gtol_eff = opts.gtol * n * max(1.0, mean_dist)

    kernel = get_kernel(opts.backend)
    r_out, t_out, objs, steps, gnorms, status, iters = kernel.refine_kernel(
        np.ascontiguousarray(r0.matrix),
        t0.as_array(),
        obj.refs,
        obj.locs,
        obj.dists,
        gtol_eff,
        opts.ftol,
        opts.max_iters,
        opts.eps_range,
        opts.armijo_c1,
        opts.shrink,
        opts.direction == "gauss_newton",
    )
    if status == 4:
        raise DegenerateRange(
            "a predicted range collapsed below eps_range during refinement"
        )

    trace = RefinementTrace(
        objectives=np.asarray(objs),
        step_sizes=np.asarray(steps),
        gradient_norms=np.asarray(gnorms),
        termination=STATUS_NAMES[status],
        iterations=int(iters),
        gtol_effective=gtol_eff,
    )
    return Rotation(r_out), Point3.from_array(t_out), trace
