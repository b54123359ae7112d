"""Core 3D types, the 16-parameter lifting, and the distance model.

A rigid transform (R, T) maps an agent's local inertial coordinates into the
global frame: p_global = R @ p_local + T. Squaring the range equation makes
every measurement linear in 16 lifted unknowns

    theta = (r11, r12, r13, r21, r22, r23, r31, r32, r33,
             t1, t2, t3,
             sum_i r_i1 t_i, sum_i r_i2 t_i, sum_i r_i3 t_i,
             sum_i t_i^2)

i.e. the nine rotation entries in row-major order, the translation, the three
column-wise products R[:, j] . T, and the squared translation norm. The
entries of a consistent theta satisfy 14 quadratic constraints (row/column
orthonormality of R and consistency of the auxiliary entries); the first 10
are independent, the last 4 are implied by them but listed separately because
the relaxation downstream benefits from keeping them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Orthogonality tolerance for accepting a matrix as a rotation, and the
# consistency tolerance expected of a freshly packed theta (unit-scale data).
TOL_ORTH = 1e-9
TOL_PACK = 1e-12

__all__ = [
    "TOL_ORTH",
    "TOL_PACK",
    "Point3",
    "Rotation",
    "RigidTransform",
    "Measurement",
    "ThetaVector",
    "CONSTRAINT_TERMS",
    "EXTENDED_IDENTITY_TERMS",
    "N_CONSTRAINTS",
    "N_INDEPENDENT",
    "transform_point",
    "predict_distance",
    "pack_theta",
    "unpack_theta",
    "constraint_residuals",
    "measurement_arrays",
]


def _check_finite(values: Iterable[float], what: str) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{what} must be finite, got {v!r}")


@dataclass(frozen=True)
class Point3:
    """A point or vector in 3D, components in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite((self.x, self.y, self.z), "Point3 component")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Point3":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


class Rotation:
    """A validated 3x3 special orthogonal matrix.

    Construction rejects matrices that are not orthogonal with determinant +1
    within ``tol``; raw intermediates from the relaxation must go through the
    nearest-rotation projection before they can become a ``Rotation``.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix, tol: float = TOL_ORTH):
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation entries must be finite")
        orth = float(np.linalg.norm(m @ m.T - np.eye(3)))
        det = float(np.linalg.det(m))
        if orth > tol or abs(det - 1.0) > tol:
            raise ValueError(
                f"not a rotation: ||RR^T - I||_F = {orth:.3e}, det = {det:.12g}"
            )
        m.flags.writeable = False
        self._m = m

    @property
    def matrix(self) -> np.ndarray:
        """The underlying 3x3 array (read-only view)."""
        return self._m

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def about_z(cls, angle_rad: float) -> "Rotation":
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        return cls([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def __repr__(self) -> str:
        rows = ", ".join(
            "[" + ", ".join(f"{v:.6g}" for v in row) + "]" for row in self._m
        )
        return f"Rotation([{rows}])"


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation mapping local coordinates to global ones."""

    rotation: Rotation
    translation: Point3

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(Rotation.identity(), Point3(0.0, 0.0, 0.0))


@dataclass(frozen=True)
class Measurement:
    """One timestamped sample: reference global position, local position of
    the agent to be localized, and the measured inter-agent distance.

    The distance may be negative when it comes from raw noisy ranging; it is
    recorded as delivered by the sensor.
    """

    time: float
    p_ref: Point3
    p_local: Point3
    distance: float

    def __post_init__(self):
        _check_finite((self.time, self.distance), "Measurement scalar")


class ThetaVector:
    """The 16-entry lifted parameter vector (layout in the module docstring)."""

    __slots__ = ("_v",)

    def __init__(self, values):
        v = np.array(values, dtype=float).reshape(16)
        if not np.all(np.isfinite(v)):
            raise ValueError("theta entries must be finite")
        v.flags.writeable = False
        self._v = v

    @property
    def values(self) -> np.ndarray:
        return self._v

    def __len__(self) -> int:
        return 16

    def __repr__(self) -> str:
        return f"ThetaVector({np.array2string(self._v, precision=6)})"


# Quadratic constraint table. Entry i describes constraint C_{i+1} as
# (quadratic terms, linear terms, constant), with 1-based theta indices:
# sum coef*theta_a*theta_b + sum coef*theta_a + const = 0 for consistent theta.
# C1..C3: unit rows of R; C4, C5: unit columns 1, 2; C6: column 1 _|_ column 2;
# C7, C8: columns 1, 2 dotted with T match theta13, theta14;
# C9: ||T||^2 matches theta16; C10: ||R^T T||^2 matches theta16.
# C11..C14 repeat the statements for column 3; they follow from C1..C10 but
# are kept because the relaxation uses them.
CONSTRAINT_TERMS = (
    (((1.0, 1, 1), (1.0, 2, 2), (1.0, 3, 3)), (), -1.0),
    (((1.0, 4, 4), (1.0, 5, 5), (1.0, 6, 6)), (), -1.0),
    (((1.0, 7, 7), (1.0, 8, 8), (1.0, 9, 9)), (), -1.0),
    (((1.0, 1, 1), (1.0, 4, 4), (1.0, 7, 7)), (), -1.0),
    (((1.0, 2, 2), (1.0, 5, 5), (1.0, 8, 8)), (), -1.0),
    (((1.0, 1, 2), (1.0, 4, 5), (1.0, 7, 8)), (), 0.0),
    (((1.0, 1, 10), (1.0, 4, 11), (1.0, 7, 12)), ((-1.0, 13),), 0.0),
    (((1.0, 2, 10), (1.0, 5, 11), (1.0, 8, 12)), ((-1.0, 14),), 0.0),
    (((1.0, 10, 10), (1.0, 11, 11), (1.0, 12, 12)), ((-1.0, 16),), 0.0),
    (((1.0, 13, 13), (1.0, 14, 14), (1.0, 15, 15)), ((-1.0, 16),), 0.0),
    (((1.0, 3, 3), (1.0, 6, 6), (1.0, 9, 9)), (), -1.0),
    (((1.0, 1, 3), (1.0, 4, 6), (1.0, 7, 9)), (), 0.0),
    (((1.0, 2, 3), (1.0, 5, 6), (1.0, 8, 9)), (), 0.0),
    (((1.0, 3, 10), (1.0, 6, 11), (1.0, 9, 12)), ((-1.0, 15),), 0.0),
)

N_CONSTRAINTS = len(CONSTRAINT_TERMS)
N_INDEPENDENT = 10

# Further quadratic identities that hold for every consistent theta: row
# orthogonality, the cross-product structure of a determinant-+1 orthogonal
# matrix (each row/column is the cross product of the other two), and
# R @ (R^T T) = T. They are implied by CONSTRAINT_TERMS at rank one but are
# independent linear conditions on the lifted matrix variable, where they
# tighten the relaxation; they are not part of constraint_residuals.
EXTENDED_IDENTITY_TERMS = (
    # row_i . row_j = 0
    (((1.0, 1, 4), (1.0, 2, 5), (1.0, 3, 6)), (), 0.0),
    (((1.0, 1, 7), (1.0, 2, 8), (1.0, 3, 9)), (), 0.0),
    (((1.0, 4, 7), (1.0, 5, 8), (1.0, 6, 9)), (), 0.0),
    # row3 = row1 x row2, row1 = row2 x row3, row2 = row3 x row1
    (((1.0, 2, 6), (-1.0, 3, 5)), ((-1.0, 7),), 0.0),
    (((1.0, 3, 4), (-1.0, 1, 6)), ((-1.0, 8),), 0.0),
    (((1.0, 1, 5), (-1.0, 2, 4)), ((-1.0, 9),), 0.0),
    (((1.0, 5, 9), (-1.0, 6, 8)), ((-1.0, 1),), 0.0),
    (((1.0, 6, 7), (-1.0, 4, 9)), ((-1.0, 2),), 0.0),
    (((1.0, 4, 8), (-1.0, 5, 7)), ((-1.0, 3),), 0.0),
    (((1.0, 3, 8), (-1.0, 2, 9)), ((-1.0, 4),), 0.0),
    (((1.0, 1, 9), (-1.0, 3, 7)), ((-1.0, 5),), 0.0),
    (((1.0, 2, 7), (-1.0, 1, 8)), ((-1.0, 6),), 0.0),
    # (column cross products coincide with the row ones: adj(R) = R^T)
    # R @ (theta13, theta14, theta15) = T
    (((1.0, 1, 13), (1.0, 2, 14), (1.0, 3, 15)), ((-1.0, 10),), 0.0),
    (((1.0, 4, 13), (1.0, 5, 14), (1.0, 6, 15)), ((-1.0, 11),), 0.0),
    (((1.0, 7, 13), (1.0, 8, 14), (1.0, 9, 15)), ((-1.0, 12),), 0.0),
)


def transform_point(t: RigidTransform, p: Point3) -> Point3:
    """Map a local-frame point into the global frame: R @ p + T."""
    out = t.rotation.matrix @ p.as_array() + t.translation.as_array()
    return Point3.from_array(out)


def predict_distance(t: RigidTransform, p_ref: Point3, p_local: Point3) -> float:
    """Distance between the reference position and the mapped local point,
    ``||R @ p_local + T - p_ref||``."""
    d = t.rotation.matrix @ p_local.as_array() + t.translation.as_array()
    d -= p_ref.as_array()
    return float(np.linalg.norm(d))


def pack_theta(t: RigidTransform) -> ThetaVector:
    """Lift a rigid transform into the 16-vector parameterization."""
    r = t.rotation.matrix
    tv = t.translation.as_array()
    theta = np.empty(16)
    theta[0:9] = r.reshape(9)  # row-major
    theta[9:12] = tv
    theta[12:15] = r.T @ tv
    theta[15] = tv @ tv
    return ThetaVector(theta)


def unpack_theta(theta: ThetaVector) -> tuple[np.ndarray, Point3]:
    """Split a theta vector into its raw 3x3 matrix block and translation.

    The matrix block is returned verbatim: no orthogonality is imposed, so
    the result of a relaxation can be inspected before projection.
    """
    v = theta.values
    return v[0:9].reshape(3, 3).copy(), Point3.from_array(v[9:12])


def constraint_residuals(theta: ThetaVector) -> np.ndarray:
    """Evaluate all 14 consistency constraints at theta, in order.

    Zero residuals mean theta[0:9] is a rotation matrix and the auxiliary
    entries agree with the rotation/translation blocks.
    """
    v = theta.values
    out = np.empty(N_CONSTRAINTS)
    for i, (quad, lin, const) in enumerate(CONSTRAINT_TERMS):
        acc = const
        for coef, a, b in quad:
            acc += coef * v[a - 1] * v[b - 1]
        for coef, a in lin:
            acc += coef * v[a - 1]
        out[i] = acc
    return out


def measurement_arrays(
    ms: Sequence[Measurement],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack a measurement list into (times, refs, locals, distances) arrays."""
    n = len(ms)
    times = np.empty(n)
    refs = np.empty((n, 3))
    locs = np.empty((n, 3))
    dists = np.empty(n)
    for k, m in enumerate(ms):
        times[k] = m.time
        refs[k] = (m.p_ref.x, m.p_ref.y, m.p_ref.z)
        locs[k] = (m.p_local.x, m.p_local.y, m.p_local.z)
        dists[k] = m.distance
    return times, refs, locs, dists
