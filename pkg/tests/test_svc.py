import numpy as np
import pytest

from ddsmpc.qp import solve_lp
from ddsmpc.svc import (DegenerateSvcError, SVCUncertaintySet, SvcModel, SvcUncertaintySet,
                        compute_theta, eval_f, fit_wgik, polytope_data, svc_dual_problem,
                        train_svc)
from ddsmpc.qp import check_kkt


def gaussian(n, seed, d=2, rho=0.6):
    cov = rho * np.ones((d, d)) + (1 - rho) * np.eye(d)
    return np.random.default_rng(seed).multivariate_normal(np.zeros(d), cov, n)


class TestWgik:
    def test_white_data(self):
        X = np.random.default_rng(0).standard_normal((5000, 3))
        np.testing.assert_allclose(fit_wgik(X).Q, np.eye(3), atol=0.05)

    def test_two_points(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0]])
        k = fit_wgik(X)
        assert k.L == pytest.approx(1.0 + np.abs(k.Q @ np.array([1.0, 0.0])).sum())

    def test_sphering(self):
        cov = np.array([[4.0, 1.2, 0.0], [1.2, 1.0, -0.3], [0.0, -0.3, 0.25]])
        X = np.random.default_rng(1).multivariate_normal(np.zeros(3), cov, 2000)
        Q = fit_wgik(X).Q
        np.testing.assert_allclose(Q @ np.cov(X, rowvar=False) @ Q.T, np.eye(3), atol=0.1)
        assert np.allclose(Q, Q.T) and np.all(np.linalg.eigvalsh(Q) > 0)

    def test_kernel_positive(self):
        X = gaussian(60, 2)
        k = fit_wgik(X)
        assert np.all(k.gram(X) > 0)

    def test_rank_deficient_regularized(self):
        x = np.random.default_rng(3).standard_normal(50)
        X = np.column_stack([x, x])  # duplicated coordinate
        assert np.all(np.isfinite(fit_wgik(X).Q))


class TestTrain:
    def test_symmetric_three_points(self):
        X = np.eye(3)
        m = train_svc(X, 0.9)
        np.testing.assert_allclose(m.alphas, 1 / 3, atol=1e-8)
        # all boundary points, f equal on each
        assert m.bsv_indices.size == 3
        f = SvcUncertaintySet.from_model(m).f(X)
        np.testing.assert_allclose(f, f[0], rtol=1e-12)
        assert compute_theta(m) == pytest.approx(f[0], rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_dual_properties(self, seed):
        X = gaussian(80, seed, d=3)
        nu = 0.1
        m = train_svc(X, nu)
        assert abs(m.alphas.sum() - 1) <= 1e-8
        assert np.all(m.alphas >= 0) and np.all(m.alphas <= 1 / (80 * nu) + m.tau)
        assert m.outlier_indices.size <= nu * 80 + 1
        assert check_kkt(svc_dual_problem(X, m.kernel, nu), m.alphas).max_residual <= 1e-6
        f = SvcUncertaintySet.from_model(m).f(X[m.bsv_indices])
        assert np.ptp(f) <= 1e-4 * m.theta
        # coverage on training data
        assert np.mean(SvcUncertaintySet.from_model(m).contains(X)) >= 1 - nu - 2 / 80

    def test_partition_matches_bounds(self):
        X = gaussian(60, 7)
        m = train_svc(X, 0.1)
        C, tau = m.upper, m.tau
        a = m.alphas
        np.testing.assert_array_equal(m.sv_indices, np.flatnonzero(a > tau))
        np.testing.assert_array_equal(m.outlier_indices, np.flatnonzero(a >= C - tau))
        assert set(m.bsv_indices) == set(m.sv_indices) - set(m.outlier_indices)

    def test_two_d_example_outliers(self):
        m = train_svc(gaussian(94, 11, rho=0.8), 0.05)
        assert m.outlier_indices.size <= int(np.ceil(0.05 * 94)) + 1

    def test_offset_invariance(self):
        X = gaussian(50, 4)
        k = fit_wgik(X)
        a = train_svc(X, 0.1, k)
        b = train_svc(X, 0.1, k.with_offset(2 * k.L))
        np.testing.assert_allclose(a.alphas, b.alphas, atol=1e-6)
        assert a.theta == pytest.approx(b.theta, abs=1e-6)

    def test_invalid_nu(self):
        X = gaussian(10, 0)
        with pytest.raises(ValueError):
            train_svc(X, 1.5)
        with pytest.raises(ValueError):
            train_svc(X, 0.05)  # N nu <= 1

    def test_single_sv_theta_guard(self):
        k = fit_wgik(np.eye(2))
        m = SvcModel(np.array([1.0, 0.0]), np.eye(2), k, 0.5, 1e-6, np.array([0]),
                     np.array([0]), np.array([], dtype=int), 0.0)
        with pytest.raises(DegenerateSvcError):
            compute_theta(m)

    def test_empty_boundary_guard(self):
        k = fit_wgik(np.eye(2))
        m = SvcModel(np.array([0.5, 0.5]), np.eye(2), k, 0.9, 1e-6, np.array([0, 1]),
                     np.array([], dtype=int), np.array([0, 1]), 1.0)
        with pytest.raises(DegenerateSvcError):
            compute_theta(m)


@pytest.fixture(scope="module")
def uset():
    return SvcUncertaintySet.from_model(train_svc(gaussian(70, 5), 0.1))


class TestSetGeometry:
    def test_one_sv_is_l1_ball(self, rng):
        Q = np.array([[2.0, 0.5], [0.5, 1.0]])
        s = SvcUncertaintySet(np.array([1.0]), np.array([[0.3, -0.2]]), Q, 1.5)
        assert eval_f(s, np.array([0.3, -0.2])) == 0.0
        W = rng.standard_normal((200, 2))
        np.testing.assert_allclose(s.f(W), np.abs((W - [0.3, -0.2]) @ Q.T).sum(axis=1))
        pd = polytope_data(s)
        assert pd.weights.size == 1 and pd.radius == 1.5

    def test_brute_force_f(self, uset, rng):
        w = rng.standard_normal(2)
        ref = sum(a * np.abs(uset.Q @ (w - p)).sum() for a, p in zip(uset.alphas, uset.sv_points))
        assert uset.f(w) == pytest.approx(ref, rel=1e-14)

    def test_membership_by_lp(self, uset, rng):
        pd = polytope_data(uset)
        ns, d = pd.points.shape
        Qrep = np.kron(np.ones((ns, 1)), pd.Q)
        I = np.eye(ns * d)
        A = np.vstack([I, I])
        c = np.repeat(pd.weights, d)
        for w in 2.0 * rng.standard_normal((100, 2)):
            r = Qrep @ w - (pd.points @ pd.Q.T).ravel()
            # v >= r and v >= -r; the minimum of sum alpha v is f(w)
            sol = solve_lp(c, A, np.concatenate([r, -r]), np.full(2 * ns * d, np.inf))
            assert sol.objective == pytest.approx(uset.f(w), abs=1e-7)
            inside_lp = sol.objective <= pd.radius + 1e-9
            assert inside_lp == (uset.f(w) <= pd.radius)

    def test_convex(self, uset, rng):
        for _ in range(200):
            a, b = 3 * rng.standard_normal((2, 2))
            assert uset.f(0.5 * (a + b)) <= 0.5 * (uset.f(a) + uset.f(b)) + 1e-12

    def test_radius_monotone(self, uset, rng):
        W = 3 * rng.standard_normal((500, 2))
        small, big = uset.contains(W), uset.with_radius(uset.radius * 1.2).contains(W)
        assert np.all(big[small])

    def test_serialization(self, uset, tmp_path):
        uset.save(tmp_path / "s.json")
        back = SvcUncertaintySet.load(tmp_path / "s.json")
        for name in ("alphas", "sv_points", "Q"):
            assert np.array_equal(getattr(back, name), getattr(uset, name))
        assert back.radius == uset.radius and back.phi_mean is None


class TestEstimator:
    def test_fit_calibrate_predict(self):
        X, C = gaussian(100, 8), gaussian(59, 9)
        est = SVCUncertaintySet(nu=0.1).fit(X)
        theta = est.theta_
        est.calibrate(C)
        assert est.set_.radius == pytest.approx(est.set_.f(C).max())
        assert est.set_.calibrated and est.theta_ == theta
        assert np.all(est.predict(C) == 1)
        np.testing.assert_allclose(est.decision_function(C), est.set_.radius - est.set_.f(C))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            SVCUncertaintySet().predict(np.zeros((1, 2)))
