"""Nearest-rotation projection (constrained orthogonal Procrustes).

Given an arbitrary 3x3 matrix M with SVD M = U S V^T, the rotation closest to
M in Frobenius norm is U V^T when det(U V^T) = +1 and U J V^T with
J = diag(1, 1, -1) when det(U V^T) = -1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousProjectionWarning, RankDeficient
from .geometry import Rotation

EPS_RANK = 1e-10

__all__ = ["EPS_RANK", "ProcrustesResult", "nearest_rotation"]


@dataclass(frozen=True)
class ProcrustesResult:
    """Projection output: the rotation, det(S - I) as a distortion measure of
    the input spectrum, and whether the determinant flip branch was taken."""

    rotation: Rotation
    orth_error: float
    flipped: bool


def nearest_rotation(m, eps_rank: float = EPS_RANK) -> ProcrustesResult:
    """Project a 3x3 matrix to the closest rotation in Frobenius norm.

    Raises RankDeficient when the second singular value is at or below
    ``eps_rank``: the projection is then ill-defined. When the flip branch is
    taken with a (near-)tied trailing spectrum the minimizer is not unique;
    an AmbiguousProjectionWarning is emitted and one minimizer is returned.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")

    u, s, vt = np.linalg.svd(m)
    if s[1] <= eps_rank:
        raise RankDeficient(
            f"second singular value {s[1]:.3e} <= {eps_rank:.1e}; "
            "nearest rotation is ill-defined"
        )

    flipped = float(np.linalg.det(u @ vt)) < 0.0
    if flipped:
        if s[1] - s[2] <= eps_rank * max(1.0, s[0]):
            warnings.warn(
                "sign flip with tied trailing singular values: the nearest "
                "rotation is not unique",
                AmbiguousProjectionWarning,
                stacklevel=2,
            )
        r = (u * np.array([1.0, 1.0, -1.0])) @ vt
    else:
        r = u @ vt

    orth_error = float(np.prod(s - 1.0))  # det(S - I) for diagonal S
    return ProcrustesResult(Rotation(r), orth_error, flipped)
