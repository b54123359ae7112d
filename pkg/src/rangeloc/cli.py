"""Command-line front end: flight-log ingestion, pipeline runs, star-topology
batches, synthetic log generation, and Monte Carlo studies.

Flight logs are CSV files with a header row and eight numeric columns:

    time,ref_x,ref_y,ref_z,local_x,local_y,local_z,distance

(time in seconds, strictly increasing; coordinates and distances in meters;
the reference positions are in the global frame, the local positions in the
GPS-denied agent's inertial frame).

Exit codes: 0 success (including runs that only carry warnings), 1 input
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import (
    EmptyFile,
    EmptyMeasurements,
    NonMonotonicTime,
    ParseError,
    RangelocError,
    StageError,
)
from .geometry import Measurement, Point3
from .pipeline import EstimationReport, PipelineOptions, estimate, failed_report

__all__ = [
    "FlightLog",
    "StarTopologyRun",
    "parse_flight_csv",
    "run_pipeline",
    "run_star",
    "emit_report",
    "report_from_json",
    "main",
]

CSV_HEADER = ("time", "ref_x", "ref_y", "ref_z", "local_x", "local_y", "local_z", "distance")


@dataclass(frozen=True)
class FlightLog:
    """Parsed flight log: at least one row, strictly increasing timestamps."""

    measurements: tuple
    source: str = ""

    def __post_init__(self):
        if len(self.measurements) == 0:
            raise EmptyFile(f"flight log {self.source or '<memory>'} has no rows")
        times = [m.time for m in self.measurements]
        for i in range(1, len(times)):
            if times[i] <= times[i - 1]:
                raise NonMonotonicTime(
                    f"time must strictly increase: row {i + 1} has t={times[i]!r} "
                    f"after t={times[i - 1]!r}"
                )

    def __len__(self) -> int:
        return len(self.measurements)


@dataclass(frozen=True)
class StarTopologyRun:
    """One flight log per GPS-denied agent, all against the same reference."""

    logs: tuple


def _read_text(source) -> tuple[str, str]:
    """Return (text, name) for a path, bytes, or file-like source."""
    if isinstance(source, bytes):
        return source.decode("utf-8"), "<bytes>"
    if isinstance(source, str) and "\n" in source:
        return source, "<string>"
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8"), str(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data, getattr(source, "name", "<stream>")


def parse_flight_csv(source) -> FlightLog:
    """Parse a flight-log CSV (path, bytes, multi-line string, or file-like).

    Raises EmptyFile when there are no data rows, ParseError with the row
    located for malformed content, and NonMonotonicTime for unsorted times.
    """
    import csv as _csv

    text, name = _read_text(source)
    rows = list(_csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(f.strip() for f in r)]
    if not rows:
        raise EmptyFile(f"{name}: no content")
    header = rows[0]
    if len(header) != 8:
        raise ParseError(
            f"{name}: header must have 8 columns, found {len(header)}"
        )
    data = rows[1:]
    if not data:
        raise EmptyFile(f"{name}: header only, no data rows")

    measurements = []
    for i, row in enumerate(data, start=1):
        if len(row) != 8:
            raise ParseError(
                f"{name}: row {i} has {len(row)} columns, expected 8"
            )
        try:
            vals = [float(f) for f in row]
        except ValueError as exc:
            raise ParseError(f"{name}: row {i}: {exc}") from None
        measurements.append(
            Measurement(
                time=vals[0],
                p_ref=Point3(vals[1], vals[2], vals[3]),
                p_local=Point3(vals[4], vals[5], vals[6]),
                distance=vals[7],
            )
        )
    return FlightLog(measurements=tuple(measurements), source=name)


def run_pipeline(log: FlightLog, opts: PipelineOptions | None = None) -> EstimationReport:
    """Full estimation on one flight log; see ``pipeline.estimate``."""
    return estimate(list(log.measurements), opts)


def run_star(
    run: StarTopologyRun | Sequence[FlightLog],
    opts: PipelineOptions | None = None,
) -> list[EstimationReport]:
    """Independent pipeline run per agent, in input order.

    A failing agent yields a ``status="failed"`` report and never disturbs
    the other agents' runs.
    """
    logs = run.logs if isinstance(run, StarTopologyRun) else tuple(run)
    reports = []
    for log in logs:
        try:
            reports.append(run_pipeline(log, opts))
        except Exception as exc:  # isolated per agent
            reports.append(failed_report(list(log.measurements), exc))
    return reports


def emit_report(report: EstimationReport, format: str = "json") -> bytes:
    """Serialize a report. ``json`` is the full nested report (stable bytes:
    sorted keys); ``csv`` is the localized-positions table plus a
    commented diagnostics footer."""
    if format == "json":
        return (
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
        ).encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        buf.write("time,x,y,z,frame\n")
        if report.localized_positions is not None:
            for t, p in zip(report.times, report.localized_positions):
                buf.write(f"{t!r},{p.x!r},{p.y!r},{p.z!r},global\n")
        buf.write(f"# status={report.status}\n")
        if report.error:
            buf.write(f"# error={report.error}\n")
        if report.diagnostics is not None:
            d = report.diagnostics
            buf.write(f"# rank={d.rank}\n")
            buf.write(f"# condition={d.condition!r}\n")
            buf.write(f"# sv_ratio={d.sv_ratio!r}\n")
            buf.write(f"# orth_error={d.orth_error!r}\n")
            buf.write(f"# objective_before={d.objective_before!r}\n")
            buf.write(f"# objective_after={d.objective_after!r}\n")
            for w in d.warnings:
                buf.write(f"# warning={w}\n")
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def report_from_json(data) -> EstimationReport:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return EstimationReport.from_dict(json.loads(data))


# ---------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # input errors exit with code 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_int_list(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v]


def _parse_float_list(text: str) -> list[float]:
    return [math.inf if v.strip() in ("inf", "Inf") else float(v) for v in text.split(",") if v]


def _pipeline_options(args) -> PipelineOptions:
    opts = PipelineOptions()
    opts.include_rlt = args.rlt
    if args.tol_feas is not None:
        opts.sdp.tol_feas = args.tol_feas
    if args.max_iters is not None:
        opts.refine.max_iters = args.max_iters
    return opts


def _write_out(data: bytes, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(path).write_bytes(data)


def _add_common_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--rlt",
        dest="rlt",
        action="store_true",
        default=False,
        help="add reformulation-linearization bounds on the rotation entries",
    )
    p.add_argument(
        "--no-rlt",
        dest="rlt",
        action="store_false",
        help="disable RLT bounds (default)",
    )
    p.add_argument("--max-iters", type=int, default=None, help="refinement iteration cap")
    p.add_argument("--tol-feas", type=float, default=None, help="SDP feasibility tolerance")


def _cmd_localize(args) -> int:
    log = parse_flight_csv(args.log)
    opts = _pipeline_options(args)
    if args.dump_sdp:
        from .sdp import assemble_system, constraint_matrices, dump_problem

        system = assemble_system(list(log.measurements))
        cons = constraint_matrices(include_rlt=args.rlt)
        with open(args.dump_sdp, "w", encoding="utf-8") as fh:
            dump_problem(system, cons, fh)
    report = run_pipeline(log, opts)
    _write_out(emit_report(report, args.format), args.output)
    if report.diagnostics and report.diagnostics.warnings:
        for w in report.diagnostics.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    from . import sim

    truth, clean = sim.make_instance(
        args.n_measurements, args.seed, kind=args.kind
    )
    noisy, sigma = sim.add_noise(clean, sim.NoiseConfig(snr_db=args.snr_db, seed=args.seed))
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for m in noisy:
        buf.write(
            f"{m.time!r},{m.p_ref.x!r},{m.p_ref.y!r},{m.p_ref.z!r},"
            f"{m.p_local.x!r},{m.p_local.y!r},{m.p_local.z!r},{m.distance!r}\n"
        )
    _write_out(buf.getvalue().encode("utf-8"), args.output)
    if args.truth_output:
        payload = {
            "rotation": [[float(v) for v in row] for row in truth.rotation.matrix],
            "translation": [truth.translation.x, truth.translation.y, truth.translation.z],
            "sigma": sigma,
            "snr_db": args.snr_db,
            "seed": args.seed,
        }
        Path(args.truth_output).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_study(args) -> int:
    from . import sim

    cfg = sim.StudyConfig(
        n_values=tuple(_parse_int_list(args.n_measurements)),
        snr_values=tuple(_parse_float_list(args.snr_db)),
        trials=args.trials,
        seed=args.seed,
        jobs=args.jobs,
    )
    result = sim.monte_carlo(cfg)
    buf = io.StringIO()
    result.write_csv(buf)
    _write_out(buf.getvalue().encode("utf-8"), args.output)
    return 0


def _cmd_star(args) -> int:
    manifest = Path(args.manifest)
    lines = [
        ln.strip()
        for ln in manifest.read_text(encoding="utf-8").splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    logs = [parse_flight_csv(manifest.parent / ln) for ln in lines]
    reports = run_star(StarTopologyRun(logs=tuple(logs)), _pipeline_options(args))
    payload = [r.to_dict() for r in reports]
    _write_out(
        (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8"),
        args.output,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rangeloc",
        description="Localize GPS-denied agents from distance-only measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="estimate the transform from a flight log")
    p.add_argument("log", help="flight-log CSV path")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", "-o", default=None, help="output path (default stdout)")
    p.add_argument("--dump-sdp", default=None, help="also dump (P, Q_i, q_i) to this path")
    _add_common_solver_flags(p)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("simulate", help="emit a synthetic flight log")
    p.add_argument("--n-measurements", type=int, default=11)
    p.add_argument(
        "--snr-db",
        type=lambda s: math.inf if s in ("inf", "Inf") else float(s),
        default=math.inf,
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("random_walk", "parallel_lines", "near_parallel"), default="random_walk")
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--truth-output", default=None, help="write the ground truth as JSON")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("study", help="Monte Carlo error study over N and SNR")
    p.add_argument("--n-measurements", default="7:16", help="e.g. 7:16 or 7,10,16")
    p.add_argument("--snr-db", default="10,20,30", help="comma list; 'inf' allowed")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("star", help="run one pipeline per agent from a manifest")
    p.add_argument("manifest", help="text file: one flight-log path per line")
    p.add_argument("--output", "-o", default=None)
    _add_common_solver_flags(p)
    p.set_defaults(func=_cmd_star)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ParseError, EmptyMeasurements, OSError, ValueError) as exc:
        print(f"rangeloc: input error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        if isinstance(exc.cause, (ParseError, EmptyMeasurements)):
            print(f"rangeloc: input error: {exc}", file=sys.stderr)
            return 1
        print(f"rangeloc: numerical failure: {exc}", file=sys.stderr)
        return 2
    except RangelocError as exc:
        print(f"rangeloc: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
