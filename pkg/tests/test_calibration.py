import time

import numpy as np
import pytest
from scipy import special, stats

from ddsmpc.calibration import (GuaranteeParams, binomial_tail, calibrate,
                                calibration_sample_size, df_decision_count, empirical_coverage,
                                rect_decision_count, scenario_sample_size)
from ddsmpc.svc import SvcUncertaintySet, train_svc


def test_calibration_sizes():
    assert calibration_sample_size(GuaranteeParams(0.05, 0.05)) == 59
    assert calibration_sample_size(GuaranteeParams(0.05, 0.10)) == 45
    assert calibration_sample_size(GuaranteeParams(0.5, 0.5)) == 1


def test_guarantee_validation():
    for e, b in ((0.0, 0.1), (0.1, 1.0), (-1, 0.5)):
        with pytest.raises(ValueError):
            GuaranteeParams(e, b)


@pytest.mark.parametrize("d,N", [(1, 59), (10, 311), (15, 434)])
def test_scenario_sizes(d, N):
    assert scenario_sample_size(d, GuaranteeParams(0.05, 0.05)) == N


def test_decision_counts():
    assert df_decision_count(5, 1, 1) == 15
    assert df_decision_count(7, 1, 1) == 28
    assert df_decision_count(1, 3, 2) == 3
    assert rect_decision_count(5, 1) == 10
    assert rect_decision_count(7, 1) == 14
    assert rect_decision_count(1, 2) == 4


def test_building_sizes():
    g = GuaranteeParams(0.05, 0.10)
    assert scenario_sample_size(df_decision_count(5, 1, 1), g) == 400
    assert scenario_sample_size(rect_decision_count(5, 1), g) == 282


def test_monotonicity_grid():
    eps, betas, ds = (0.02, 0.05, 0.1), (0.01, 0.05, 0.1), range(1, 12)
    for e in eps:
        for b in betas:
            g = GuaranteeParams(e, b)
            Ns = [scenario_sample_size(d, g) for d in ds]
            assert Ns == sorted(Ns)
            assert scenario_sample_size(1, g) == calibration_sample_size(g)
    for d in (3, 8):
        assert scenario_sample_size(d, GuaranteeParams(0.02, 0.05)) >= scenario_sample_size(
            d, GuaranteeParams(0.05, 0.05))
        assert scenario_sample_size(d, GuaranteeParams(0.05, 0.01)) >= scenario_sample_size(
            d, GuaranteeParams(0.05, 0.10))


@pytest.mark.parametrize("N,d,eps", [(59, 1, 0.05), (311, 10, 0.05), (434, 15, 0.05),
                                     (2000, 40, 0.01), (10_000, 150, 0.02), (50, 50, 0.3)])
def test_tail_matches_incomplete_beta(N, d, eps):
    ref = special.betainc(N - d + 1, d, 1 - eps) if d <= N else 1.0
    assert binomial_tail(N, d, eps) == pytest.approx(ref, abs=1e-12)
    assert binomial_tail(N, d, eps) == pytest.approx(stats.binom.cdf(d - 1, N, eps), abs=1e-12)


def test_sample_size_is_smallest():
    g = GuaranteeParams(0.05, 0.05)
    for d in (5, 15, 28):
        N = scenario_sample_size(d, g)
        assert binomial_tail(N, d, 0.05) <= 0.05 < binomial_tail(N - 1, d, 0.05)


def test_huge_d_rejected():
    with pytest.raises(ValueError):
        scenario_sample_size(10**6, GuaranteeParams(1e-3, 1e-3))


def test_fast():
    g = GuaranteeParams(0.05, 0.05)
    t = time.perf_counter()
    for H in (5, 6, 7):
        scenario_sample_size(df_decision_count(H, 1, 1), g)
        scenario_sample_size(rect_decision_count(H, 1), g)
    assert time.perf_counter() - t < 1.0


@pytest.fixture
def one_sv_set():
    return SvcUncertaintySet(np.array([1.0]), np.zeros((1, 1)), np.eye(1), 1.0)


def test_calibrate_takes_max(one_sv_set):
    res = calibrate(one_sv_set, np.array([[1.0], [-3.0], [2.0]]))
    assert res.theta_tilde == 3.0 and res.max_index == 1 and res.n_used == 3
    assert np.all(res.uncertainty_set.contains(np.array([[1.0], [-3.0], [2.0]])))


def test_calibrate_shrinks(rng):
    X = rng.standard_normal((80, 2))
    model = train_svc(X, 0.1)
    uset = SvcUncertaintySet.from_model(model)
    inside = X[uset.f(X) < model.theta]
    res = calibrate(uset, inside)
    assert res.theta_tilde <= model.theta


def test_calibrate_requires_count(one_sv_set):
    with pytest.raises(ValueError, match="59"):
        calibrate(one_sv_set, np.zeros((10, 1)), GuaranteeParams(0.05, 0.05))


def test_calibrate_dimension(one_sv_set):
    with pytest.raises(ValueError):
        calibrate(one_sv_set, np.zeros((3, 2)))


def test_two_d_example_radii_order_of_magnitude():
    rng = np.random.default_rng(0)
    cov = [[1.0, 0.8], [0.8, 1.0]]
    X = rng.multivariate_normal([0, 0], cov, 94)
    C = rng.multivariate_normal([0, 0], cov, 59)
    model = train_svc(X, 0.05)
    res = calibrate(SvcUncertaintySet.from_model(model), C, GuaranteeParams(0.05, 0.05))
    # reference values 4.1146 and 4.2714 come from an unknown sample
    assert 1.0 < model.theta < 20.0 and 1.0 < res.theta_tilde < 20.0


def test_empirical_coverage(one_sv_set, rng):
    C = rng.standard_normal((59, 1))
    res = calibrate(one_sv_set, C)
    assert empirical_coverage(res.uncertainty_set, C) == 1.0
    zero = one_sv_set.with_radius(0.0)
    assert empirical_coverage(zero, rng.standard_normal((100, 1))) == 0.0


def test_coverage_guarantee_repetitions():
    # 20 repetitions: coverage >= 0.95 should hold in at least 90% of them
    from ddsmpc.scenarios import Ar1Params, generate_ar1, lift

    g = GuaranteeParams(0.05, 0.05)
    ok = 0
    for r in range(20):
        p = Ar1Params(seed=r)
        tr = lift(generate_ar1(p, 200, 3))
        est_set = SvcUncertaintySet.from_model(train_svc(tr.data, 0.05), tr.phi_mean)
        cal = lift(generate_ar1(Ar1Params(seed=1000 + r), 59, 3), "tanh", tr.phi_mean)
        res = calibrate(est_set, cal.data, g)
        ev = lift(generate_ar1(Ar1Params(seed=5000 + r), 20_000, 3), "tanh", tr.phi_mean)
        ok += empirical_coverage(res.uncertainty_set, ev.data) >= 0.95
    assert ok >= 18
