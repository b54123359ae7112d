"""End-to-end estimation: assemble, relax, round, project, refine.

The stages run in a fixed order: stack the measurement rows, solve the
semidefinite relaxation, round its solution to a lifted vector, project the
raw matrix block to the nearest rotation, then refine by maximum likelihood.
Every stage's outputs and the geometric health checks (numerical rank,
spectrum ratio, trajectory planarity) end up in an ``EstimationReport``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import StageError
from .geometry import (
    Measurement,
    Point3,
    RigidTransform,
    Rotation,
    measurement_arrays,
    transform_point,
    unpack_theta,
)
from .mle import MleObjective, RefineOptions, refine
from .procrustes import nearest_rotation
from .sdp import (
    MIN_MEASUREMENTS,
    SdpOptions,
    assemble_system,
    constraint_matrices,
    extract_candidates,
    extract_rank1,
    polish_theta,
    rank_diagnostic,
    solve_sdp,
)

PLANARITY_THRESHOLD = 0.02

__all__ = [
    "PLANARITY_THRESHOLD",
    "PipelineOptions",
    "Diagnostics",
    "EstimationReport",
    "estimate",
    "failed_report",
]


@dataclass
class PipelineOptions:
    include_redundant: bool = True
    include_rlt: bool = False
    include_extended: bool = True
    # rounding multistart: candidates drawn from the relaxation's top
    # eigenspace, each polished on the lifted system; the refined transform
    # with the lowest MLE objective wins. 1 disables the search (leading
    # eigenpair only). Skipped automatically when the solution is already
    # near rank one.
    n_candidates: int = 12
    polish: bool = True
    candidate_seed: int = 0
    tight_sv_ratio: float = 1e5
    sdp: SdpOptions = field(default_factory=SdpOptions)
    refine: RefineOptions = field(default_factory=RefineOptions)


@dataclass
class Diagnostics:
    rank: int
    condition: float
    sv_ratio: float
    orth_error: float
    flipped: bool
    objective_before: float
    objective_after: float
    sdp_iterations: int
    refine_iterations: int
    refine_termination: str
    planarity_ref: float
    planarity_local: float
    warnings: list = field(default_factory=list)


@dataclass
class EstimationReport:
    """Per-stage estimates plus diagnostics for one agent's log.

    ``localized_positions`` are the local points mapped through the final
    estimate into the global frame, one per measurement. A report with
    ``status == "failed"`` carries only the error message and input metadata
    (used by star-topology runs to isolate per-agent failures).
    """

    status: str
    n_measurements: int
    times: list
    error: str | None = None
    sdp_rotation_raw: np.ndarray | None = None
    sdp_translation: Point3 | None = None
    procrustes_estimate: RigidTransform | None = None
    mle_estimate: RigidTransform | None = None
    diagnostics: Diagnostics | None = None
    localized_positions: list | None = None

    def to_dict(self) -> dict:
        def point(p: Point3 | None):
            return None if p is None else [p.x, p.y, p.z]

        def transform(t: RigidTransform | None):
            if t is None:
                return None
            return {
                "rotation": [[float(v) for v in row] for row in t.rotation.matrix],
                "translation": point(t.translation),
            }

        d = None
        if self.diagnostics is not None:
            d = {
                "rank": int(self.diagnostics.rank),
                "condition": float(self.diagnostics.condition),
                "sv_ratio": float(self.diagnostics.sv_ratio),
                "orth_error": float(self.diagnostics.orth_error),
                "flipped": bool(self.diagnostics.flipped),
                "objective_before": float(self.diagnostics.objective_before),
                "objective_after": float(self.diagnostics.objective_after),
                "sdp_iterations": int(self.diagnostics.sdp_iterations),
                "refine_iterations": int(self.diagnostics.refine_iterations),
                "refine_termination": self.diagnostics.refine_termination,
                "planarity_ref": float(self.diagnostics.planarity_ref),
                "planarity_local": float(self.diagnostics.planarity_local),
                "warnings": list(self.diagnostics.warnings),
            }
        return {
            "status": self.status,
            "error": self.error,
            "n_measurements": int(self.n_measurements),
            "times": [float(t) for t in self.times],
            "sdp_estimate": None
            if self.sdp_rotation_raw is None
            else {
                "rotation_raw": [
                    [float(v) for v in row] for row in self.sdp_rotation_raw
                ],
                "translation": point(self.sdp_translation),
            },
            "procrustes_estimate": transform(self.procrustes_estimate),
            "mle_estimate": transform(self.mle_estimate),
            "diagnostics": d,
            "localized_positions": None
            if self.localized_positions is None
            else [point(p) for p in self.localized_positions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationReport":
        def point(v):
            return None if v is None else Point3(*v)

        def transform(v):
            if v is None:
                return None
            return RigidTransform(
                Rotation(np.array(v["rotation"])), point(v["translation"])
            )

        diag = None
        if d.get("diagnostics") is not None:
            dd = d["diagnostics"]
            diag = Diagnostics(
                rank=dd["rank"],
                condition=dd["condition"],
                sv_ratio=dd["sv_ratio"],
                orth_error=dd["orth_error"],
                flipped=dd["flipped"],
                objective_before=dd["objective_before"],
                objective_after=dd["objective_after"],
                sdp_iterations=dd["sdp_iterations"],
                refine_iterations=dd["refine_iterations"],
                refine_termination=dd["refine_termination"],
                planarity_ref=dd["planarity_ref"],
                planarity_local=dd["planarity_local"],
                warnings=list(dd["warnings"]),
            )
        sdp_est = d.get("sdp_estimate")
        return cls(
            status=d["status"],
            error=d.get("error"),
            n_measurements=d["n_measurements"],
            times=list(d["times"]),
            sdp_rotation_raw=None
            if sdp_est is None
            else np.array(sdp_est["rotation_raw"]),
            sdp_translation=None if sdp_est is None else point(sdp_est["translation"]),
            procrustes_estimate=transform(d.get("procrustes_estimate")),
            mle_estimate=transform(d.get("mle_estimate")),
            diagnostics=diag,
            localized_positions=None
            if d.get("localized_positions") is None
            else [point(p) for p in d["localized_positions"]],
        )


def _planarity_ratio(points: np.ndarray) -> float:
    """Smallest-to-largest singular value ratio of the centered point cloud;
    near zero means (near-)coplanar."""
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0:
        return 0.0
    return float(sv[-1] / sv[0])


def _stage(label: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(label, exc) from exc
            return False

    return _Ctx()


def estimate(
    measurements: Sequence[Measurement], opts: PipelineOptions | None = None
) -> EstimationReport:
    """Run the full pipeline on a measurement list."""
    opts = opts or PipelineOptions()
    n = len(measurements)
    times, refs, locs, _ = measurement_arrays(measurements)
    notes: list[str] = []

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        with _stage("assemble"):
            system = assemble_system(measurements)
            rank, condition = rank_diagnostic(system, opts.sdp.rank_tol)
            cons = constraint_matrices(
                include_redundant=opts.include_redundant,
                include_rlt=opts.include_rlt,
                include_extended=opts.include_extended,
            )
        with _stage("sdp-solve"):
            sol = solve_sdp(system, cons, opts.sdp)
        with _stage("extract"):
            theta, _ = extract_rank1(sol.X, opts.sdp.eps_corner)
            candidates = [theta]
            if opts.n_candidates > 1 and sol.sv_ratio < opts.tight_sv_ratio:
                candidates += extract_candidates(
                    sol,
                    n_random=opts.n_candidates - 1,
                    seed=opts.candidate_seed,
                    eps_corner=opts.sdp.eps_corner,
                )
        with _stage("refine"):
            mle_obj = MleObjective(list(measurements))
            best = None
            last_error: Exception | None = None
            for cand in candidates:
                th = polish_theta(cand, system) if opts.polish else cand
                raw_c, t_c = unpack_theta(th)
                try:
                    proc_c = nearest_rotation(raw_c)
                except Exception as exc:
                    last_error = exc
                    continue
                r_c, tt_c, trace_c = refine(proc_c.rotation, t_c, mle_obj, opts.refine)
                # both endpoint objectives come from the kernel's own trace so
                # the non-increase invariant holds exactly
                f0 = float(trace_c.objectives[0])
                f1 = float(trace_c.objectives[-1])
                if best is None or f1 < best[0]:
                    best = (f1, raw_c, t_c, proc_c, f0, r_c, tt_c, trace_c)
            if best is None:
                raise last_error if last_error else RuntimeError(
                    "no usable rounding candidate"
                )
            _, raw_r, t_sdp, proc, f_before, r_hat, t_hat, trace = best

    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
        notes.append(str(w.message))

    if n < MIN_MEASUREMENTS:
        notes.append(f"under-determined: {n} measurements < {MIN_MEASUREMENTS}")
    if rank < MIN_MEASUREMENTS:
        notes.append(
            f"measurement system rank {rank} < {MIN_MEASUREMENTS}: the transform "
            "is not uniquely determined by this geometry"
        )
    planarity_ref = _planarity_ratio(refs)
    planarity_local = _planarity_ratio(locs)
    if n >= 4 and planarity_ref < PLANARITY_THRESHOLD:
        notes.append(
            f"reference trajectory is near-coplanar (ratio {planarity_ref:.2e}): "
            "height is weakly observable and mirror solutions are nearby"
        )
    if n >= 4 and planarity_local < PLANARITY_THRESHOLD:
        notes.append(
            f"local trajectory is near-coplanar (ratio {planarity_local:.2e}): "
            "height is weakly observable and mirror solutions are nearby"
        )
    if sol.status != "optimal":
        notes.append(f"relaxation stopped with status {sol.status!r}")

    final = RigidTransform(r_hat, t_hat)
    localized = [transform_point(final, m.p_local) for m in measurements]

    diag = Diagnostics(
        rank=rank,
        condition=condition,
        sv_ratio=sol.sv_ratio,
        orth_error=proc.orth_error,
        flipped=proc.flipped,
        objective_before=f_before,
        objective_after=float(trace.objectives[-1]),
        sdp_iterations=sol.iterations,
        refine_iterations=trace.iterations,
        refine_termination=trace.termination,
        planarity_ref=planarity_ref,
        planarity_local=planarity_local,
        warnings=notes,
    )
    return EstimationReport(
        status="ok",
        n_measurements=n,
        times=[float(t) for t in times],
        sdp_rotation_raw=raw_r,
        sdp_translation=t_sdp,
        procrustes_estimate=RigidTransform(proc.rotation, t_sdp),
        mle_estimate=final,
        diagnostics=diag,
        localized_positions=localized,
    )


def failed_report(
    measurements: Sequence[Measurement], error: Exception
) -> EstimationReport:
    times, *_ = measurement_arrays(measurements)
    return EstimationReport(
        status="failed",
        n_measurements=len(measurements),
        times=[float(t) for t in times],
        error=f"{type(error).__name__}: {error}",
    )
