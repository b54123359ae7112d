"""Synthetic instances, noise calibration, error metrics, and Monte Carlo
studies for the full estimation pipeline.

Noise is calibrated through an SNR in dB: the injected Gaussian noise has
standard deviation sigma = mean(distance) / 10^(SNR/20), i.e. the signal
amplitude is the average inter-agent distance and the noise amplitude its
RMS. Degenerate geometries (both agents on parallel straight lines) are
constructible on purpose; they make the measurement system rank-deficient.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from .errors import LengthMismatch, ZeroSignal, ZeroVector
from .geometry import (
    Measurement,
    Point3,
    RigidTransform,
    Rotation,
    predict_distance,
)
from .pipeline import EstimationReport, PipelineOptions, estimate

TRAJECTORY_KINDS = ("random_walk", "straight_line", "parallel_lines", "near_parallel")
DEFAULT_REGION = ((-1000.0, 1000.0), (-1000.0, 1000.0), (-1000.0, 1000.0))
# Between-sample motion comparable to the real flight trial (the reference
# vehicle there covers ~1 km over 11 samples); much smaller steps leave the
# relative direction nearly constant and the rotation barely observable.
DEFAULT_STEP = 200.0
NEAR_PARALLEL_TILT = 1e-3

__all__ = [
    "TRAJECTORY_KINDS",
    "DEFAULT_REGION",
    "DEFAULT_STEP",
    "TrajectoryConfig",
    "NoiseConfig",
    "ErrorMetrics",
    "StudyConfig",
    "StudyCell",
    "StudyResult",
    "generate_trajectory",
    "sample_transform",
    "synth_instance",
    "make_instance",
    "add_noise",
    "direction_error",
    "rotation_error",
    "translation_rel_error",
    "evaluate_report",
    "monte_carlo",
]


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str
    n_points: int
    step_scale: float = DEFAULT_STEP
    region: tuple = DEFAULT_REGION
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"kind must be one of {TRAJECTORY_KINDS}, got {self.kind!r}")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if not self.step_scale > 0.0:
            raise ValueError("step_scale must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not (self.snr_db > 0.0 or math.isinf(self.snr_db)):
            raise ValueError(f"snr_db must be positive or infinite, got {self.snr_db}")


@dataclass(frozen=True)
class ErrorMetrics:
    direction_error_deg: float
    translation_rel_error: float
    rotation_frob_error: float


def _region_arrays(region) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(region, dtype=float)
    if r.shape != (3, 2):
        raise ValueError("region must be three (lo, hi) pairs")
    return r[:, 0], r[:, 1]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_trajectory(cfg: TrajectoryConfig) -> list[Point3]:
    """Deterministic trajectory for one agent.

    Straight-line kinds draw the direction before anything region-dependent,
    so two configs sharing a seed produce parallel lines even when their
    regions (hence starting points) differ.
    """
    rng = np.random.default_rng(cfg.seed)
    lo, hi = _region_arrays(cfg.region)
    if cfg.kind == "random_walk":
        start = lo + rng.random(3) * (hi - lo)
        steps = cfg.step_scale * rng.standard_normal((cfg.n_points - 1, 3))
        pts = start + np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    else:
        direction = _unit(rng.standard_normal(3))
        start = lo + rng.random(3) * (hi - lo)
        if cfg.kind == "near_parallel":
            direction = _unit(direction + NEAR_PARALLEL_TILT * rng.standard_normal(3))
        ks = np.arange(cfg.n_points)[:, None]
        pts = start + ks * cfg.step_scale * direction
    return [Point3.from_array(p) for p in pts]


def sample_transform(rng: np.random.Generator, region=DEFAULT_REGION) -> RigidTransform:
    """Ground-truth transform: rotation uniform on SO(3) via a normalized
    Gaussian quaternion, translation uniform in the region."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    lo, hi = _region_arrays(region)
    t = lo + rng.random(3) * (hi - lo)
    return RigidTransform(Rotation(r), Point3.from_array(t))


def synth_instance(
    truth: RigidTransform,
    traj_ref: Sequence[Point3],
    traj_local: Sequence[Point3],
) -> list[Measurement]:
    """Noiseless measurements: exact predicted distance at each time step."""
    if len(traj_ref) != len(traj_local):
        raise LengthMismatch(
            f"trajectory lengths differ: {len(traj_ref)} vs {len(traj_local)}"
        )
    return [
        Measurement(
            time=float(k),
            p_ref=pr,
            p_local=pl,
            distance=predict_distance(truth, pr, pl),
        )
        for k, (pr, pl) in enumerate(zip(traj_ref, traj_local))
    ]


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def make_instance(
    n: int,
    seed: int,
    kind: str = "random_walk",
    region=DEFAULT_REGION,
    step_scale: float = DEFAULT_STEP,
) -> tuple[RigidTransform, list[Measurement]]:
    """Ground truth plus a noiseless instance of n measurements.

    Both agents fly within the same region in the *global* frame (as in a
    shared airspace); the GPS-denied agent's trajectory is then expressed in
    its own frame through the true transform. For the degenerate kinds both
    global paths are straight lines with parallel (or nearly parallel)
    directions.
    """
    ss = np.random.SeedSequence(seed)
    truth_ss, a_ss, b_ss = ss.spawn(3)
    truth = sample_transform(np.random.default_rng(truth_ss), region)

    if kind in ("parallel_lines", "near_parallel"):
        rng = np.random.default_rng(a_ss)
        lo, hi = _region_arrays(region)
        direction = _unit(rng.standard_normal(3))
        start_a = lo + rng.random(3) * (hi - lo)
        start_b = lo + rng.random(3) * (hi - lo)
        dir_b = direction
        if kind == "near_parallel":
            dir_b = _unit(direction + NEAR_PARALLEL_TILT * rng.standard_normal(3))
        ks = np.arange(n)[:, None]
        ref_pts = start_a + ks * step_scale * direction
        global_b = start_b + ks * step_scale * dir_b
    else:
        traj_ref = generate_trajectory(
            TrajectoryConfig(kind, n, step_scale, region, _seed_int(a_ss))
        )
        traj_global_b = generate_trajectory(
            TrajectoryConfig(kind, n, step_scale, region, _seed_int(b_ss))
        )
        ref_pts = np.array([p.as_array() for p in traj_ref])
        global_b = np.array([p.as_array() for p in traj_global_b])

    r = truth.rotation.matrix
    t = truth.translation.as_array()
    local_pts = (global_b - t) @ r  # R^T (g - t) rowwise
    traj_ref_p = [Point3.from_array(p) for p in ref_pts]
    traj_local_p = [Point3.from_array(p) for p in local_pts]
    return truth, synth_instance(truth, traj_ref_p, traj_local_p)


def add_noise(
    ms: Sequence[Measurement], cfg: NoiseConfig
) -> tuple[list[Measurement], float]:
    """Perturb distances with Gaussian noise calibrated to the SNR.

    Returns the noisy measurements and the injected sigma in meters. Noisy
    distances are recorded raw: negative values are kept, not clamped.
    """
    dists = np.array([m.distance for m in ms])
    if math.isinf(cfg.snr_db):
        return list(ms), 0.0
    mean_dist = float(np.mean(dists))
    if mean_dist == 0.0:
        raise ZeroSignal("mean distance is zero; SNR-calibrated noise undefined")
    sigma = mean_dist / 10.0 ** (cfg.snr_db / 20.0)
    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, sigma, len(ms))
    noisy = [
        replace(m, distance=float(m.distance + dn)) for m, dn in zip(ms, noise)
    ]
    return noisy, sigma


def direction_error(t_est: Point3, t_true: Point3) -> float:
    """Angle in degrees between estimated and true translation directions."""
    a = t_est.as_array()
    b = t_true.as_array()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("direction error undefined for a zero translation")
    c = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(c))


def rotation_error(r_est: Rotation, r_true: Rotation) -> float:
    """Frobenius distance between two rotations; at most 2*sqrt(2)."""
    return float(np.linalg.norm(r_est.matrix - r_true.matrix))


def translation_rel_error(t_est: Point3, t_true: Point3) -> float:
    denom = t_true.norm()
    if denom == 0.0:
        raise ZeroVector("relative error undefined for a zero true translation")
    return float(
        np.linalg.norm(t_est.as_array() - t_true.as_array()) / denom
    )


def evaluate_report(report: EstimationReport, truth: RigidTransform):
    """Error metrics of the final and the relaxation-stage estimates."""
    final = ErrorMetrics(
        direction_error_deg=direction_error(
            report.mle_estimate.translation, truth.translation
        ),
        translation_rel_error=translation_rel_error(
            report.mle_estimate.translation, truth.translation
        ),
        rotation_frob_error=rotation_error(
            report.mle_estimate.rotation, truth.rotation
        ),
    )
    stage = ErrorMetrics(
        direction_error_deg=direction_error(
            report.procrustes_estimate.translation, truth.translation
        ),
        translation_rel_error=translation_rel_error(
            report.procrustes_estimate.translation, truth.translation
        ),
        rotation_frob_error=rotation_error(
            report.procrustes_estimate.rotation, truth.rotation
        ),
    )
    return final, stage


@dataclass
class StudyConfig:
    n_values: tuple
    snr_values: tuple
    trials: int = 200
    seed: int = 0
    kind: str = "random_walk"
    step_scale: float = DEFAULT_STEP
    region: tuple = DEFAULT_REGION
    pipeline: PipelineOptions | None = None
    jobs: int = 1


@dataclass
class StudyCell:
    """Aggregated metrics for one (n_measurements, snr_db) grid point."""

    n_measurements: int
    snr_db: float
    mean_direction_error_deg: float
    mean_rotation_frob: float
    mean_translation_rel: float
    trials: int
    failures: int
    mean_direction_error_sdp_deg: float = float("nan")
    mean_rotation_frob_sdp: float = float("nan")
    objective_improved: int = 0


@dataclass
class StudyResult:
    config: StudyConfig
    cells: list = field(default_factory=list)

    CSV_COLUMNS = (
        "n_measurements",
        "snr_db",
        "mean_direction_error_deg",
        "mean_rotation_frob",
        "mean_translation_rel",
        "trials",
        "failures",
    )

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream)
        writer.writerow(self.CSV_COLUMNS)
        for c in self.cells:
            writer.writerow(
                [
                    c.n_measurements,
                    c.snr_db,
                    f"{c.mean_direction_error_deg:.12g}",
                    f"{c.mean_rotation_frob:.12g}",
                    f"{c.mean_translation_rel:.12g}",
                    c.trials,
                    c.failures,
                ]
            )


def _run_trial(args) -> dict | None:
    """One pipeline trial; returns metrics or None on a tallied failure."""
    (n, snr, snr_idx, trial_idx, master_seed, kind, step_scale, region, options) = args
    trial_seed = int(
        np.random.SeedSequence([master_seed, n, snr_idx, trial_idx]).generate_state(1)[0]
    )
    truth, clean = make_instance(n, trial_seed, kind, region, step_scale)
    noisy, _ = add_noise(clean, NoiseConfig(snr_db=snr, seed=trial_seed + 1))
    try:
        report = estimate(noisy, options)
        final, stage = evaluate_report(report, truth)
    except Exception:
        return None
    return {
        "direction": final.direction_error_deg,
        "rotation": final.rotation_frob_error,
        "translation": final.translation_rel_error,
        "direction_sdp": stage.direction_error_deg,
        "rotation_sdp": stage.rotation_frob_error,
        "improved": report.diagnostics.objective_after
        <= report.diagnostics.objective_before,
    }


def monte_carlo(study: StudyConfig) -> StudyResult:
    """Run the full pipeline over the study grid and aggregate mean errors.

    Per-trial seeds derive from the master seed, so results are independent
    of execution order and of the number of worker processes. Failed trials
    are counted, excluded from the means, and never abort the study.
    """
    options = study.pipeline or PipelineOptions()
    result = StudyResult(config=study)
    for n in study.n_values:
        for snr_idx, snr in enumerate(study.snr_values):
            args = [
                (
                    n,
                    snr,
                    snr_idx,
                    t,
                    study.seed,
                    study.kind,
                    study.step_scale,
                    study.region,
                    options,
                )
                for t in range(study.trials)
            ]
            if study.jobs > 1:
                with ProcessPoolExecutor(max_workers=study.jobs) as pool:
                    outcomes = list(pool.map(_run_trial, args, chunksize=8))
            else:
                outcomes = [_run_trial(a) for a in args]

            ok = [o for o in outcomes if o is not None]
            failures = len(outcomes) - len(ok)

            def mean_of(key):
                return float(np.mean([o[key] for o in ok])) if ok else float("nan")

            result.cells.append(
                StudyCell(
                    n_measurements=n,
                    snr_db=snr,
                    mean_direction_error_deg=mean_of("direction"),
                    mean_rotation_frob=mean_of("rotation"),
                    mean_translation_rel=mean_of("translation"),
                    trials=len(ok),
                    failures=failures,
                    mean_direction_error_sdp_deg=mean_of("direction_sdp"),
                    mean_rotation_frob_sdp=mean_of("rotation_sdp"),
                    objective_improved=sum(1 for o in ok if o["improved"]),
                )
            )
    return result
