import numpy as np
import pytest

from ddsmpc.scenarios import (Ar1Params, SaturatedLifting, ScenarioSet, estimate_moments,
                              generate_ar1, lift, load_csv, saturate, save_csv, sliding_windows,
                              split)


class TestAr1:
    def test_white_noise_std(self):
        S = generate_ar1(Ar1Params(rho=0.0, stationary_std=0.3, seed=1), 10_000, 3)
        assert S.data.std(axis=0) == pytest.approx(np.full(3, 0.3), rel=0.05)

    def test_lag_one_autocorrelation(self):
        S = generate_ar1(Ar1Params(rho=0.6, stationary_std=0.05, seed=2), 10_000, 5)
        a, b = S.data[:, :-1].ravel(), S.data[:, 1:].ravel()
        assert np.corrcoef(a, b)[0, 1] == pytest.approx(0.6, abs=0.05)

    def test_determinism(self):
        p = Ar1Params(seed=9)
        assert np.array_equal(generate_ar1(p, 20, 4).data, generate_ar1(p, 20, 4).data)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            Ar1Params(rho=1.0)
        with pytest.raises(ValueError):
            Ar1Params(stationary_std=0.0)

    def test_stationary_variance_in_moments(self):
        S = generate_ar1(Ar1Params(rho=0.6, stationary_std=0.05, seed=3), 1000, 5)
        m = estimate_moments(lift(S))
        np.testing.assert_allclose(np.diag(m.S_ww), 0.05 ** 2, rtol=0.10)


class TestCsvSplit:
    def test_split_sizes_disjoint(self, tmp_path):
        S = ScenarioSet(np.arange(20.0).reshape(10, 2), 2, 1)
        save_csv(S, tmp_path / "s.csv")
        S2 = load_csv(tmp_path / "s.csv")
        assert np.array_equal(S2.data, S.data)
        tr, ca = split(S2, 7, 3, seed=0)
        assert tr.N == 7 and ca.N == 3
        assert not set(map(tuple, tr.data)) & set(map(tuple, ca.data))

    def test_split_too_many(self):
        S = ScenarioSet(np.zeros((10, 1)), 1, 1)
        with pytest.raises(ValueError, match="11"):
            split(S, 7, 4)

    def test_building_split(self):
        S = ScenarioSet(np.random.default_rng(0).standard_normal((282, 5)), 5, 1)
        tr, ca = split(S, 237, 45)
        assert (tr.N, ca.N) == (237, 45)

    def test_malformed_row_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("w0,w1\n1,2\n3,x\n")
        with pytest.raises(ValueError, match="row 3"):
            load_csv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(ValueError, match="row 2"):
            load_csv(p)

    def test_sliding_windows(self):
        W = sliding_windows(np.arange(6.0), 3)
        np.testing.assert_array_equal(W, [[0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4, 5]])


class TestSaturation:
    def test_values(self):
        assert saturate("tanh", 0.0) == 0.0
        assert saturate("clamp", 2.0) == 1.0 and saturate("clamp", -3.0) == -1.0
        # Taylor series of tanh at 1 summed to convergence
        x = 1.0
        e2 = sum(((2 * x) ** k) / np.prod(np.arange(1, k + 1, dtype=float)) for k in range(40))
        assert saturate("tanh", 1.0) == pytest.approx((e2 - 1) / (e2 + 1), abs=1e-12)
        assert saturate("tanh", 1.0) == pytest.approx(0.761594, abs=1e-6)

    def test_bounded(self, rng):
        r = 100 * rng.standard_normal(1000)
        for k in ("tanh", "clamp"):
            assert np.all(np.abs(saturate(k, r)) <= 1)


class TestLift:
    def test_zero_scenarios(self):
        L = lift(ScenarioSet(np.zeros((4, 3)), 3, 1))
        np.testing.assert_array_equal(L.phi, 0.0)
        np.testing.assert_array_equal(L.phi_mean, 0.0)

    def test_single_scenario(self):
        L = lift(ScenarioSet(np.array([[0.3, -2.0]]), 2, 1))
        np.testing.assert_array_equal(L.phi, 0.0)

    def test_hand_clamp(self):
        S = ScenarioSet(np.array([[0.5, 2.0], [-3.0, 0.0], [1.0, -0.5]]), 2, 1)
        L = lift(S, "clamp")
        phi = np.array([[0.5, 1.0], [-1.0, 0.0], [1.0, -0.5]])
        m = np.array([0.5 / 3, 0.5 / 3])
        np.testing.assert_allclose(L.phi_mean, m)
        np.testing.assert_allclose(L.data, np.hstack([phi - m, S.data]))

    def test_centering_and_range(self, rng):
        S = ScenarioSet(rng.standard_normal((50, 4)), 4, 1)
        L = lift(S)
        assert np.max(np.abs(L.phi.mean(axis=0))) <= 1e-12
        assert np.all(L.phi >= -1 - L.phi_mean) and np.all(L.phi <= 1 - L.phi_mean)
        assert np.array_equal(L.scenarios().data, S.data)

    def test_frozen_mean_reused(self, rng):
        tr = lift(ScenarioSet(rng.standard_normal((30, 2)), 2, 1))
        new = lift(ScenarioSet(rng.standard_normal((5, 2)), 2, 1), "tanh", tr.phi_mean)
        assert np.array_equal(new.phi_mean, tr.phi_mean)

    def test_transformer(self, rng):
        X = rng.standard_normal((20, 3))
        T = SaturatedLifting().fit(X)
        np.testing.assert_allclose(T.transform(X), lift(ScenarioSet(X, 3, 1)).data)


class TestMoments:
    def test_zero(self):
        m = estimate_moments(lift(ScenarioSet(np.zeros((3, 2)), 2, 1)))
        for M in (m.S_phiphi, m.S_wphi, m.S_ww):
            np.testing.assert_array_equal(M, 0.0)

    def test_symmetric_pair(self):
        a = np.array([0.2, -0.4])
        m = estimate_moments(lift(ScenarioSet(np.vstack([a, -a]), 2, 1)))
        np.testing.assert_allclose(m.S_ww, np.outer(a, a))

    def test_needs_two(self):
        with pytest.raises(ValueError):
            estimate_moments(lift(ScenarioSet(np.zeros((1, 2)), 2, 1)))

    def test_psd(self, rng):
        m = estimate_moments(lift(ScenarioSet(rng.standard_normal((7, 5)), 5, 1)))
        for M in (m.S_phiphi, m.S_ww):
            v = rng.standard_normal((100, 5))
            assert np.all(np.einsum("ij,jk,ik->i", v, M, v) >= -1e-9)

    def test_clamp_identity_inside_box(self, rng):
        # uncentered clamp lift of data in [-1, 1]: phi = w, so all three moments coincide
        W = rng.uniform(-1, 1, (40, 3))
        L = lift(ScenarioSet(W, 3, 1), "clamp", np.zeros(3))
        m = estimate_moments(L)
        np.testing.assert_allclose(m.S_wphi, m.S_ww)
        np.testing.assert_allclose(m.S_phiphi, m.S_ww)
