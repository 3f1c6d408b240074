import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from ddsmpc.qp import (QpStatus, QuadraticProgram, SolverSettings, check_kkt, solve_lp,
                       solve_qp)
from ddsmpc.svc import fit_wgik, svc_dual_problem, train_svc


def enumerate_active_sets(P, q, A, lo, hi):
    """Brute-force KKT solve over every (inactive, lower, upper) assignment."""
    n, m = P.shape[0], A.shape[0]
    best = None
    for pattern in itertools.product((0, -1, 1), repeat=m):
        act = [i for i in range(m) if pattern[i]]
        if any(not np.isfinite(lo[i] if pattern[i] < 0 else hi[i]) for i in act):
            continue
        Aa = A[act]
        b = np.array([lo[i] if pattern[i] < 0 else hi[i] for i in act])
        K = np.block([[P, Aa.T], [Aa, np.zeros((len(act), len(act)))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-q, b]))
        except np.linalg.LinAlgError:
            continue
        z, y = sol[:n], sol[n:]
        if np.any(A @ z < lo - 1e-9) or np.any(A @ z > hi + 1e-9):
            continue
        # y enters as P z + q + A_a' y = 0: lower-active needs y <= 0, upper-active y >= 0
        sgn = np.array([pattern[i] for i in act])
        if np.any(sgn * y < -1e-9):
            continue
        val = 0.5 * z @ P @ z + q @ z
        if best is None or val < best[0]:
            best = (val, z)
    return best


def random_qp(rng, n=5, m=None, box=True):
    L = rng.standard_normal((n, n))
    P = L @ L.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    if box:
        A = np.eye(n)
    else:
        A = rng.standard_normal((m, n))
    lo = -rng.uniform(0.1, 1.0, A.shape[0])
    hi = rng.uniform(0.1, 1.0, A.shape[0])
    return P, q, A, lo, hi


class TestSolveQp:
    def test_active_lower_bound(self):
        sol = solve_qp(QuadraticProgram(np.array([[2.0]]), np.zeros(1), np.eye(1),
                                        np.array([1.0]), np.array([np.inf])))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1.0, abs=1e-7)
        assert sol.objective == pytest.approx(1.0, abs=1e-7)

    def test_unconstrained_minimum(self):
        prob = QuadraticProgram(np.eye(3), np.zeros(3), np.zeros((0, 3)), np.zeros(0),
                                np.zeros(0))
        sol = solve_qp(prob)
        assert sol.optimal
        np.testing.assert_allclose(sol.z, 0.0, atol=1e-8)

    @pytest.mark.parametrize("method", ["ipm", "admm"])
    @pytest.mark.parametrize("seed", range(6))
    def test_box_qp_matches_enumeration(self, seed, method):
        rng = np.random.default_rng(seed)
        P, q, A, lo, hi = random_qp(rng)
        ref_val, ref_z = enumerate_active_sets(P, q, A, lo, hi)
        sol = solve_qp(QuadraticProgram(P, q, A, lo, hi), SolverSettings(method=method))
        assert sol.optimal
        np.testing.assert_allclose(sol.z, ref_z, atol=1e-5)
        assert sol.objective == pytest.approx(ref_val, abs=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_small_general_qp_matches_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 9))
        P, q, A, lo, hi = random_qp(rng, n, m, box=False)
        # one-sided rows exercise infinite bounds
        lo[rng.random(m) < 0.3] = -np.inf
        ref = enumerate_active_sets(P, q, A, lo, hi)
        sol = solve_qp(QuadraticProgram(P, q, A, lo, hi))
        assert ref is not None and sol.optimal
        assert sol.objective == pytest.approx(ref[0], abs=1e-5)

    def test_infeasible_reported(self):
        A = np.array([[1.0], [1.0]])
        sol = solve_qp(QuadraticProgram(np.eye(1), np.zeros(1), A, np.array([1.0, -np.inf]),
                                        np.array([np.inf, 0.0])))
        assert sol.status is QpStatus.INFEASIBLE
        assert not sol.optimal

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            QuadraticProgram(np.eye(2), np.zeros(3), np.eye(2), np.zeros(2), np.ones(2))

    def test_bounds_order_checked(self):
        with pytest.raises(ValueError):
            QuadraticProgram(np.eye(1), np.zeros(1), np.eye(1), np.ones(1), np.zeros(1))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        P, q, A, lo, hi = random_qp(rng, 6, 8, box=False)
        prob = QuadraticProgram(P, q, A, lo, hi)
        a, b = solve_qp(prob), solve_qp(prob)
        assert np.array_equal(a.z, b.z) and a.iterations == b.iterations

    def test_psd_cost_with_zero_block(self):
        # P singular: the solver regularizes internally, objective is reported unchanged
        P = np.diag([1.0, 0.0])
        sol = solve_qp(QuadraticProgram(P, np.array([0.0, 1.0]), np.eye(2), np.array([-1, -2.0]),
                                        np.array([1.0, 2.0])))
        assert sol.optimal
        np.testing.assert_allclose(sol.z, [0.0, -2.0], atol=1e-6)
        assert sol.objective == pytest.approx(-2.0, abs=1e-6)

    def test_sparse_input(self):
        rng = np.random.default_rng(3)
        P, q, A, lo, hi = random_qp(rng)
        dense = solve_qp(QuadraticProgram(P, q, A, lo, hi))
        sparse = solve_qp(QuadraticProgram(sp.csc_matrix(P), q, sp.csc_matrix(A), lo, hi))
        np.testing.assert_allclose(dense.z, sparse.z, atol=1e-6)

    def test_settings_validated(self):
        with pytest.raises(ValueError):
            SolverSettings(abs_tol=0.0)
        with pytest.raises(ValueError):
            SolverSettings(method="simplex")


def polytope_vertex_max(uset, a):
    """Maximize a'w over a 2-D SVC polytope by walking every breakpoint line."""
    Q, W = uset.Q, uset.sv_points
    lines = []
    for w_i in W:
        for k in range(2):
            n = Q[k]
            d = np.array([-n[1], n[0]])
            lines.append((w_i, n, d / np.linalg.norm(d)))
    best = -np.inf
    for w_i, n, d in lines:
        p = w_i  # n'(p - w_i) = 0
        ss = []
        for w_j, n2, _ in lines:
            den = n2 @ d
            if abs(den) > 1e-14:
                ss.append(n2 @ (w_j - p) / den)
        ss = np.unique(ss)
        span = max(1.0, np.ptp(ss))
        ss = np.concatenate([[ss[0] - 10 * span], ss, [ss[-1] + 10 * span]])
        f = uset.f(p + ss[:, None] * d)
        r = uset.radius
        for k in range(ss.size - 1):
            f0, f1 = f[k] - r, f[k + 1] - r
            if f0 == 0:
                best = max(best, a @ (p + ss[k] * d))
            if f0 * f1 < 0:
                s = ss[k] - f0 * (ss[k + 1] - ss[k]) / (f1 - f0)
                best = max(best, a @ (p + s * d))
    return best


class TestSolveLp:
    def test_max_over_interval(self):
        sol = solve_lp(np.array([-1.0]), np.eye(1), np.array([-1.0]), np.array([1.0]))
        assert sol.optimal and -sol.objective == pytest.approx(1.0, abs=1e-7)

    def test_box_support(self, rng):
        for _ in range(5):
            a = rng.standard_normal(4)
            l = -rng.random(4)
            u = rng.random(4)
            sol = solve_lp(-a, np.eye(4), l, u)
            assert -sol.objective == pytest.approx(np.sum(np.maximum(a * l, a * u)), abs=1e-7)

    def test_unbounded_status(self):
        sol = solve_lp(np.array([-1.0, 0.0]), np.array([[0.0, 1.0]]), np.array([0.0]),
                       np.array([1.0]))
        assert sol.status is QpStatus.UNBOUNDED

    @pytest.mark.parametrize("seed", range(8))
    def test_svc_polytope_matches_vertex_enumeration(self, seed):
        from ddsmpc.control.validation import svc_support
        from ddsmpc.svc import SvcUncertaintySet

        rng = np.random.default_rng(seed)
        X = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=40)
        model = train_svc(X, 0.1)
        uset = SvcUncertaintySet.from_model(model)
        for _ in range(3):
            a = rng.standard_normal(2)
            assert svc_support(uset, a) == pytest.approx(polytope_vertex_max(uset, a), abs=1e-6)


class TestCheckKkt:
    def _example(self):
        prob = QuadraticProgram(np.array([[2.0]]), np.zeros(1), np.eye(1), np.array([1.0]),
                                np.array([np.inf]))
        return prob, solve_qp(prob)

    def test_optimal_point(self):
        prob, sol = self._example()
        assert check_kkt(prob, sol.z).max_residual <= 1e-7

    def test_perturbed_point_flagged(self):
        prob, sol = self._example()
        rep = check_kkt(prob, sol.z + 0.1)
        assert max(rep.primal_feasibility, rep.stationarity) > 1e-3

    def test_svc_dual(self):
        X = np.random.default_rng(0).standard_normal((30, 2))
        model = train_svc(X, 0.2)
        prob = svc_dual_problem(X, model.kernel, 0.2)
        assert check_kkt(prob, model.alphas).max_residual <= 1e-6

    def test_wrong_dimension(self):
        prob, _ = self._example()
        with pytest.raises(ValueError):
            check_kkt(prob, np.zeros(2))
