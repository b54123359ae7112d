import io

import numpy as np
import pytest

from rangeloc import sim
from rangeloc.errors import EmptyMeasurements
from rangeloc.geometry import Measurement, Point3, ThetaVector, constraint_residuals, pack_theta
from rangeloc.sdp import (
    ConstraintSet,
    assemble_row,
    assemble_system,
    constraint_matrices,
    dump_problem,
    load_problem,
    rank_diagnostic,
)

from conftest import random_transform


def _meas(p_ref, p_local, d, t=0.0):
    return Measurement(t, Point3(*p_ref), Point3(*p_local), d)


class TestAssembleRow:
    def test_origin_only_norm_slot_survives(self):
        row, b = assemble_row(_meas((0, 0, 0), (0, 0, 0), 5.0))
        expect = np.zeros(16)
        expect[15] = 1.0
        assert np.array_equal(row, expect)
        assert b == 25.0

    def test_hand_expanded_unit_case(self):
        # term-by-term expansion of the squared-range equation for
        # p_ref = e1, p_local = e2, d = 1
        row, b = assemble_row(_meas((1, 0, 0), (0, 1, 0), 1.0))
        expect = np.zeros(16)
        expect[1] = -2.0  # r12 slot: -2 x1 y2
        expect[9] = -2.0  # t1 slot:  -2 x1
        expect[13] = 2.0  # aux slot: +2 y2
        expect[15] = 1.0
        assert np.array_equal(row, expect)
        assert b == 1.0 - 1.0 - 1.0

    def test_row_matches_prediction_identity(self, rng):
        # A[k] . theta(R, T) == b[k] exactly when d is the predicted range
        from rangeloc.geometry import predict_distance

        for _ in range(25):
            t = random_transform(rng)
            p_ref = Point3.from_array(rng.standard_normal(3) * 3)
            p_local = Point3.from_array(rng.standard_normal(3) * 3)
            d = predict_distance(t, p_ref, p_local)
            row, b = assemble_row(_meas(p_ref.as_array(), p_local.as_array(), d))
            theta = pack_theta(t).values
            assert row @ theta == pytest.approx(b, rel=1e-10, abs=1e-10)


class TestAssembleSystem:
    def test_single_measurement_rank_one(self):
        sys_ = assemble_system([_meas((1, 2, 3), (4, 5, 6), 7.0)])
        assert sys_.A.shape == (1, 16)
        assert np.linalg.matrix_rank(sys_.P) == 1

    def test_seven_generic_rank_seven(self):
        _, ms = sim.make_instance(7, seed=11)
        rank, _ = rank_diagnostic(assemble_system(ms))
        assert rank == 7

    def test_duplicate_rows_leave_rank(self):
        _, ms = sim.make_instance(7, seed=11)
        rank0, _ = rank_diagnostic(assemble_system(ms))
        rank1, _ = rank_diagnostic(assemble_system(list(ms) + list(ms)))
        assert rank1 == rank0

    def test_empty_rejected(self):
        with pytest.raises(EmptyMeasurements):
            assemble_system([])

    def test_p_is_gram_matrix(self):
        _, ms = sim.make_instance(5, seed=3)
        sys_ = assemble_system(ms)
        ab = np.hstack([sys_.A, sys_.b[:, None]])
        assert np.allclose(sys_.P, ab.T @ ab, rtol=1e-12)
        assert np.allclose(sys_.P, sys_.P.T)
        assert np.min(np.linalg.eigvalsh(sys_.P)) >= -1e-6 * np.trace(sys_.P)


def lift(theta: np.ndarray) -> np.ndarray:
    v = np.concatenate([theta, [-1.0]])
    return np.outer(v, v)


class TestConstraintMatrices:
    def test_row_norm_structure(self):
        cons = constraint_matrices()
        q, rhs = cons.equalities[0]
        expect = np.zeros((17, 17))
        expect[0, 0] = expect[1, 1] = expect[2, 2] = 1.0
        assert np.array_equal(q, expect)
        assert rhs == 1.0

    def test_aux_coupling_structure(self):
        # bilinear terms get half weight on symmetric pairs; the linear term
        # lands in the corner column with sign flipped by the -1 corner
        cons = constraint_matrices()
        q, rhs = cons.equalities[6]  # 7th constraint
        expect = np.zeros((17, 17))
        for a, b in ((0, 9), (3, 10), (6, 11)):
            expect[a, b] = expect[b, a] = 0.5
        expect[12, 16] = expect[16, 12] = 0.5
        assert np.array_equal(q, expect)
        assert rhs == 0.0

    def test_encoding_matches_residuals(self, rng):
        # <Q_i, X(theta)> - q_i == C_i(theta) for every constraint
        cons = constraint_matrices(include_extended=False)
        assert len(cons.equalities) == 15
        for _ in range(100):
            theta = rng.standard_normal(16)
            x = lift(theta)
            res = constraint_residuals(ThetaVector(theta))
            for i in range(14):
                q, rhs = cons.equalities[i]
                assert np.sum(q * x) - rhs == pytest.approx(res[i], abs=1e-10)

    def test_corner_constraint(self, rng):
        cons = constraint_matrices()
        q, rhs = cons.equalities[14]
        theta = rng.standard_normal(16)
        assert np.sum(q * lift(theta)) == pytest.approx(1.0)
        assert rhs == 1.0

    def test_extended_rows_vanish_on_lifted_transforms(self, rng):
        cons = constraint_matrices(include_extended=True)
        assert len(cons.equalities) == 30
        for _ in range(20):
            theta = pack_theta(random_transform(rng)).values
            x = lift(theta)
            for q, rhs in cons.equalities:
                assert np.sum(q * x) == pytest.approx(rhs, abs=1e-10)

    def test_without_redundant(self):
        cons = constraint_matrices(include_redundant=False, include_extended=False)
        assert len(cons.equalities) == 11  # 10 core + corner

    def test_rlt_inequalities(self, rng):
        cons = constraint_matrices(include_rlt=True)
        assert len(cons.inequalities) == 27
        theta = pack_theta(random_transform(rng)).values
        x = lift(theta)
        for g, h in cons.inequalities:
            assert np.sum(g * x) <= h + 1e-12


class TestRankDiagnostic:
    def test_parallel_lines_rank_deficient(self):
        for seed in range(10):
            _, ms = sim.make_instance(9, seed=seed, kind="parallel_lines")
            rank, _ = rank_diagnostic(assemble_system(ms))
            assert rank < 7

    def test_generic_seven(self):
        for seed in range(10):
            _, ms = sim.make_instance(7, seed=seed)
            rank, cond = rank_diagnostic(assemble_system(ms))
            assert rank == 7
            assert cond >= 1.0

    def test_three_measurements(self):
        _, ms = sim.make_instance(3, seed=1)
        rank, _ = rank_diagnostic(assemble_system(ms))
        assert rank <= 3


class TestDump:
    def test_round_trip(self):
        _, ms = sim.make_instance(5, seed=2)
        sys_ = assemble_system(ms)
        cons = constraint_matrices(include_rlt=True)
        buf = io.StringIO()
        dump_problem(sys_, cons, buf)
        buf.seek(0)
        p, eqs, ineqs = load_problem(buf)
        assert np.allclose(p, sys_.P, rtol=1e-15)
        assert len(eqs) == len(cons.equalities)
        assert len(ineqs) == len(cons.inequalities)
        for (q0, r0), (q1, r1) in zip(eqs, cons.equalities):
            assert np.array_equal(q0, q1)
            assert r0 == r1
