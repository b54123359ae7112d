import math

import numpy as np
import pytest

from rangeloc import sim
from rangeloc.errors import (
    DegenerateRange,
    EmptyMeasurements,
    InvalidSigma,
    UnderDeterminedWarning,
)
from rangeloc.geometry import Measurement, Point3, RigidTransform, Rotation
from rangeloc.mle import (
    MleObjective,
    RefineOptions,
    euclidean_gradients,
    log_likelihood,
    objective,
    project_tangent,
    refine,
)

from conftest import random_rotation, random_transform


def noiseless_objective(n=7, seed=0):
    truth, ms = sim.make_instance(n, seed=seed)
    return truth, MleObjective(ms)


class TestObjective:
    def test_zero_at_truth(self):
        truth, obj = noiseless_objective()
        assert objective(truth.rotation, truth.translation, obj) <= 1e-15

    def test_single_offset_squared(self):
        truth, ms = sim.make_instance(7, seed=1)
        bumped = list(ms)
        m = bumped[3]
        bumped[3] = Measurement(m.time, m.p_ref, m.p_local, m.distance + 2.0)
        obj = MleObjective(bumped)
        assert objective(truth.rotation, truth.translation, obj) == pytest.approx(4.0)

    def test_matches_term_by_term_sum(self, rng):
        truth, ms = sim.make_instance(7, seed=2)
        obj = MleObjective(ms)
        t = random_transform(rng, t_scale=500.0)
        total = 0.0
        for m in ms:
            from rangeloc.geometry import predict_distance

            total += (m.distance - predict_distance(t, m.p_ref, m.p_local)) ** 2
        assert objective(t.rotation, t.translation, obj) == pytest.approx(total, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyMeasurements):
            MleObjective([])


class TestLogLikelihood:
    def test_perfect_fit_single_sample(self):
        p = Point3(0.0, 0.0, 0.0)
        obj = MleObjective(
            [Measurement(0.0, p, Point3(3.0, 4.0, 0.0), 5.0)], sigma=1.0
        )
        ll = log_likelihood(Rotation.identity(), p, obj)
        assert ll == pytest.approx(-math.log(math.sqrt(2 * math.pi)))

    def test_two_sigma_squared_objective(self):
        p = Point3(0.0, 0.0, 0.0)
        sigma = 0.7
        off = math.sqrt(2.0) * sigma  # objective = 2 sigma^2
        obj = MleObjective(
            [Measurement(0.0, p, Point3(1.0, 0.0, 0.0), 1.0 + off)], sigma=sigma
        )
        ll = log_likelihood(Rotation.identity(), p, obj)
        assert ll == pytest.approx(-1.0 - math.log(sigma * math.sqrt(2 * math.pi)))

    def test_argmax_matches_objective_argmin(self, rng):
        truth, ms = sim.make_instance(8, seed=3)
        noisy, _ = sim.add_noise(ms, sim.NoiseConfig(20.0, 4))
        obj = MleObjective(noisy, sigma=5.0)
        grid = [random_transform(rng, t_scale=800.0) for _ in range(20)]
        objs = [objective(t.rotation, t.translation, obj) for t in grid]
        lls = [log_likelihood(t.rotation, t.translation, obj) for t in grid]
        assert int(np.argmin(objs)) == int(np.argmax(lls))

    def test_sigma_must_be_positive(self):
        _, obj = noiseless_objective()
        obj.sigma = 0.0
        with pytest.raises(InvalidSigma):
            log_likelihood(Rotation.identity(), Point3(0, 0, 0), obj)


class TestGradients:
    def test_zero_at_noiseless_optimum(self):
        truth, obj = noiseless_objective()
        m, g = euclidean_gradients(truth.rotation, truth.translation, obj)
        assert np.linalg.norm(m) <= 1e-7
        assert np.linalg.norm(g) <= 1e-9

    def test_finite_difference_single_measurement(self):
        p_ref = Point3(1.0, -2.0, 0.5)
        p_local = Point3(0.3, 0.9, -1.1)
        obj = MleObjective([Measurement(0.0, p_ref, p_local, 2.5)])
        r = random_rotation(np.random.default_rng(5))
        t = np.array([0.4, -0.2, 1.0])
        m, g = euclidean_gradients(r, t, obj)
        h = 1e-6
        r0 = r.matrix

        def f(rm, tv):
            return objective(rm, tv, obj)

        for i in range(3):
            for j in range(3):
                dm = np.zeros((3, 3))
                dm[i, j] = h
                fd = (f(r0 + dm, t) - f(r0 - dm, t)) / (2 * h)
                assert m[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-8)
        for i in range(3):
            dt = np.zeros(3)
            dt[i] = h
            fd = (f(r0, t + dt) - f(r0, t - dt)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_linear_in_residual_scaling(self, rng):
        # doubling every residual around a fit doubles the gradients
        truth, ms = sim.make_instance(7, seed=6)
        base = np.array([m.distance for m in ms])
        delta = rng.standard_normal(len(ms))
        for scale in (1.0, 2.0):
            bumped = [
                Measurement(m.time, m.p_ref, m.p_local, float(d0 + scale * dd))
                for m, d0, dd in zip(ms, base, delta)
            ]
            m_grad, g_grad = euclidean_gradients(
                truth.rotation, truth.translation, MleObjective(bumped)
            )
            if scale == 1.0:
                m1, g1 = m_grad, g_grad
        assert np.allclose(m_grad, 2.0 * m1, rtol=1e-9)
        assert np.allclose(g_grad, 2.0 * g1, rtol=1e-9)

    def test_degenerate_range_raises(self):
        p = Point3(0.0, 0.0, 0.0)
        obj = MleObjective([Measurement(0.0, p, p, 1.0)])
        with pytest.raises(DegenerateRange):
            euclidean_gradients(Rotation.identity(), p, obj)


class TestProjectTangent:
    def test_symmetric_projects_to_zero(self, rng):
        s = rng.standard_normal((3, 3))
        s = s + s.T
        assert np.allclose(project_tangent(Rotation.identity(), s), 0.0, atol=1e-15)

    def test_skew_is_fixed(self, rng):
        s = rng.standard_normal((3, 3))
        s = s - s.T
        assert np.allclose(project_tangent(Rotation.identity(), s), s, atol=1e-15)

    def test_tangent_normal_orthogonality(self, rng):
        for _ in range(50):
            r = random_rotation(rng)
            m = rng.standard_normal((3, 3))
            mt = project_tangent(r, m)
            assert abs(np.sum(mt * (m - mt))) <= 1e-10
            # R^T M_T skew, R^T (M - M_T) symmetric
            a = r.matrix.T @ mt
            b = r.matrix.T @ (m - mt)
            assert np.allclose(a, -a.T, atol=1e-12)
            assert np.allclose(b, b.T, atol=1e-12)


class TestRefine:
    def test_immediate_return_at_truth(self):
        truth, obj = noiseless_objective(seed=7)
        r, t, trace = refine(truth.rotation, truth.translation, obj)
        assert trace.iterations <= 1
        assert trace.objectives[-1] <= 1e-12

    def test_recovers_from_sdp_init(self):
        from rangeloc import pipeline

        truth, ms = sim.make_instance(7, seed=8)
        rep = pipeline.estimate(ms)
        r_err = np.linalg.norm(rep.mle_estimate.rotation.matrix - truth.rotation.matrix)
        t_err = np.linalg.norm(
            rep.mle_estimate.translation.as_array() - truth.translation.as_array()
        )
        assert r_err <= 1e-6
        assert t_err <= 1e-6 * truth.translation.norm()

    def test_noisy_objective_never_increases(self):
        truth, clean = sim.make_instance(9, seed=9)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(30.0, 10))
        obj = MleObjective(noisy)
        f0 = objective(truth.rotation, truth.translation, obj)
        r, t, trace = refine(truth.rotation, truth.translation, obj)
        assert trace.objectives[-1] <= f0
        assert np.all(np.diff(trace.objectives) <= 1e-9)

    def test_rotations_stay_on_manifold(self):
        truth, clean = sim.make_instance(8, seed=11)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(20.0, 12))
        obj = MleObjective(noisy)
        r, t, trace = refine(truth.rotation, truth.translation, obj)
        rm = r.matrix
        assert np.linalg.norm(rm @ rm.T - np.eye(3)) <= 1e-9

    def test_stationarity_at_output(self):
        truth, clean = sim.make_instance(10, seed=13)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(30.0, 14))
        obj = MleObjective(noisy)
        r, t, trace = refine(truth.rotation, truth.translation, obj)
        if trace.termination == "gtol":
            m, g = euclidean_gradients(r, t, obj)
            mt = project_tangent(r, m)
            assert np.linalg.norm(mt) + np.linalg.norm(g) <= 2 * trace.gtol_effective

    def test_gradient_matches_fd_along_tangent_directions(self, rng):
        # projected gradient against finite differences of retracted moves
        truth, clean = sim.make_instance(9, seed=15)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(20.0, 16))
        obj = MleObjective(noisy)
        checked = 0
        for _ in range(50):
            t = random_transform(rng, t_scale=500.0)
            try:
                m, g = euclidean_gradients(t.rotation, t.translation, obj)
            except DegenerateRange:
                continue
            mt = project_tangent(t.rotation, m)
            for _ in range(10):
                q = rng.standard_normal((3, 3))
                q = q - q.T
                dr = t.rotation.matrix @ q
                dt = rng.standard_normal(3)
                directional = float(np.sum(mt * dr) + g @ dt)
                h = 1e-7
                fp = objective(t.rotation.matrix + h * dr, t.translation.as_array() + h * dt, obj)
                fm = objective(t.rotation.matrix - h * dr, t.translation.as_array() - h * dt, obj)
                fd = (fp - fm) / (2 * h)
                assert directional == pytest.approx(
                    fd, rel=1e-5, abs=1e-4 * max(1.0, abs(fd))
                )
            checked += 1
            if checked >= 10:
                break
        assert checked >= 5

    def test_frame_covariance(self, rng):
        # rotating the global frame rotates the noiseless estimates
        truth, ms = sim.make_instance(8, seed=17)
        obj = MleObjective(ms)
        g = random_rotation(rng)
        gm = g.matrix
        rotated = [
            Measurement(
                m.time,
                Point3.from_array(gm @ m.p_ref.as_array()),
                m.p_local,
                m.distance,
            )
            for m in ms
        ]
        obj_rot = MleObjective(rotated)

        r0 = truth.rotation
        t0 = truth.translation
        r1, t1, _ = refine(r0, t0, obj)
        r0g = Rotation(gm @ r0.matrix)
        t0g = Point3.from_array(gm @ t0.as_array())
        r2, t2, _ = refine(r0g, t0g, obj_rot)
        assert np.linalg.norm(r2.matrix - gm @ r1.matrix) <= 1e-8
        assert np.linalg.norm(t2.as_array() - gm @ t1.as_array()) <= 1e-6

    def test_underdetermined_warns(self):
        truth, ms = sim.make_instance(5, seed=18)
        obj = MleObjective(ms)
        with pytest.warns(UnderDeterminedWarning):
            refine(truth.rotation, truth.translation, obj)

    def test_flow_direction_descends(self):
        truth, clean = sim.make_instance(8, seed=19)
        noisy, _ = sim.add_noise(clean, sim.NoiseConfig(30.0, 20))
        obj = MleObjective(noisy)
        opts = RefineOptions(direction="flow", max_iters=200)
        f0 = objective(truth.rotation, truth.translation, obj)
        _, _, trace = refine(truth.rotation, truth.translation, obj, opts)
        assert trace.objectives[-1] <= f0
        assert np.all(np.diff(trace.objectives) <= 1e-9)

    def test_unknown_direction_rejected(self):
        truth, obj = noiseless_objective(seed=21)
        with pytest.raises(ValueError):
            refine(truth.rotation, truth.translation, obj, RefineOptions(direction="newton"))
