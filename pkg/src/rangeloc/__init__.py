"""rangeloc: 3D localization of GPS-denied agents from distance-only data.

A GPS-equipped reference agent and a GPS-denied agent exchange distance
measurements while both move; this package estimates the rotation and
translation mapping the denied agent's inertial frame into the global frame.
The pipeline solves a semidefinite relaxation of the squared-range equations,
rounds it to a rank-one estimate, projects the matrix block to the nearest
rotation, and refines by maximum likelihood with a projected gradient flow
on SO(3).
"""

from ._kernels import DEFAULT_BACKEND, available_backends
from .errors import (
    AmbiguousProjectionWarning,
    DegenerateRange,
    DegenerateSpectrum,
    EmptyFile,
    EmptyMeasurements,
    Infeasible,
    InvalidSigma,
    LengthMismatch,
    NonMonotonicTime,
    NumericalBreakdown,
    ParseError,
    RangelocError,
    RankDeficient,
    StageError,
    UnderDeterminedWarning,
    ZeroSignal,
    ZeroVector,
)
from .geometry import (
    Measurement,
    Point3,
    RigidTransform,
    Rotation,
    ThetaVector,
    constraint_residuals,
    pack_theta,
    predict_distance,
    transform_point,
    unpack_theta,
)
from .mle import MleObjective, RefineOptions, euclidean_gradients, log_likelihood
from .mle import objective as mle_objective
from .mle import project_tangent, refine
from .pipeline import EstimationReport, PipelineOptions, estimate
from .procrustes import ProcrustesResult, nearest_rotation
from .sdp import (
    ConstraintSet,
    LinearSystem,
    SdpOptions,
    SdpSolution,
    assemble_row,
    assemble_system,
    constraint_matrices,
    extract_rank1,
    rank_diagnostic,
    solve_sdp,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "DEFAULT_BACKEND",
    "available_backends",
    # geometry
    "Point3",
    "Rotation",
    "RigidTransform",
    "Measurement",
    "ThetaVector",
    "transform_point",
    "predict_distance",
    "pack_theta",
    "unpack_theta",
    "constraint_residuals",
    # sdp
    "LinearSystem",
    "ConstraintSet",
    "SdpOptions",
    "SdpSolution",
    "assemble_row",
    "assemble_system",
    "constraint_matrices",
    "solve_sdp",
    "extract_rank1",
    "rank_diagnostic",
    # procrustes
    "ProcrustesResult",
    "nearest_rotation",
    # mle
    "MleObjective",
    "RefineOptions",
    "mle_objective",
    "log_likelihood",
    "euclidean_gradients",
    "project_tangent",
    "refine",
    # pipeline
    "PipelineOptions",
    "EstimationReport",
    "estimate",
    # errors
    "RangelocError",
    "EmptyMeasurements",
    "LengthMismatch",
    "Infeasible",
    "NumericalBreakdown",
    "DegenerateSpectrum",
    "RankDeficient",
    "DegenerateRange",
    "InvalidSigma",
    "ZeroSignal",
    "ZeroVector",
    "ParseError",
    "NonMonotonicTime",
    "EmptyFile",
    "StageError",
    "UnderDeterminedWarning",
    "AmbiguousProjectionWarning",
]
