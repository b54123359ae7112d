#!/usr/bin/env python3
"""Benchmark the refinement kernels: compiled extension vs numpy fallback.

Runs the same refinement problem through every available backend, checks the
results agree, and reports per-call timing. Also times one full pipeline run
per backend for context.

    python benchmarks/refine_backends.py [--trials 200]
"""

import argparse
import time

import numpy as np

from rangeloc import sim
from rangeloc._kernels import DEFAULT_BACKEND, available_backends
from rangeloc.geometry import Point3, Rotation
from rangeloc.mle import MleObjective, RefineOptions, refine
from rangeloc.pipeline import PipelineOptions, estimate


def perturbed_init(truth, seed):
    rng = np.random.default_rng(seed)
    w = 0.05 * rng.standard_normal(3)
    hat = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    u, _, vt = np.linalg.svd(truth.rotation.matrix @ (np.eye(3) + hat))
    r0 = Rotation(u @ vt)
    t0 = Point3.from_array(truth.translation.as_array() + 15.0 * rng.standard_normal(3))
    return r0, t0


def time_refine(backend, problems, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        for obj, r0, t0v in problems:
            result = refine(r0, t0v, obj, RefineOptions(backend=backend))
        best = min(best, (time.perf_counter() - t0) / len(problems))
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=100, help="problems per timing pass")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"backends available: {', '.join(available_backends())} "
          f"(default: {DEFAULT_BACKEND})")

    problems = []
    for seed in range(args.trials):
        truth, clean = sim.make_instance(11, seed=seed)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(snr_db=30.0, seed=seed + 1))
        r0, t0 = perturbed_init(truth, seed)
        problems.append((MleObjective(noisy), r0, t0))

    timings = {}
    finals = {}
    for backend in available_backends():
        per_call, (r, t, trace) = time_refine(backend, problems, args.repeats)
        timings[backend] = per_call
        finals[backend] = float(trace.objectives[-1])
        print(f"  refine[{backend:8s}]: {per_call * 1e6:10.1f} us/call "
              f"(last objective {finals[backend]:.6g}, {trace.iterations} iters)")

    if len(timings) == 2:
        ratio = timings["python"] / timings["compiled"]
        agree = abs(finals["python"] - finals["compiled"]) <= 1e-6 * max(
            1.0, abs(finals["python"])
        )
        print(f"  speedup compiled vs python: {ratio:.1f}x (objectives agree: {agree})")

    # full pipeline context: one noisy estimate per backend
    truth, clean = sim.make_instance(10, seed=7)
    noisy, _ = sim.add_noise(clean, sim.NoiseConfig(snr_db=20.0, seed=8))
    for backend in available_backends():
        opts = PipelineOptions()
        opts.refine.backend = backend
        t0 = time.perf_counter()
        for _ in range(5):
            estimate(noisy, opts)
        per = (time.perf_counter() - t0) / 5
        print(f"  pipeline[{backend:8s}]: {per * 1e3:8.1f} ms/run")


if __name__ == "__main__":
    main()
