import json

import numpy as np
import pytest

from ddsmpc.benchmarks.plants import TWO_MASS_X0, building_model, two_mass_spring_model
from ddsmpc.lti import LtiModel, build_prediction_matrices, load_model_json, simulate_step


def test_single_block_horizon():
    m = two_mass_spring_model()
    p = build_prediction_matrices(m, 1)
    np.testing.assert_array_equal(p.Abold, m.A)
    np.testing.assert_array_equal(p.Bu, m.B_u)
    np.testing.assert_array_equal(p.Bw, m.B_w)


def test_two_mass_block_2_1():
    m = two_mass_spring_model()
    p = build_prediction_matrices(m, 2)
    np.testing.assert_allclose(p.Bu[4:8, 0:1], m.A @ m.B_u, rtol=0, atol=0)
    np.testing.assert_array_equal(p.Bu[0:4, 1:2], 0.0)


def test_identity_powers():
    m = LtiModel(np.eye(3), np.ones((3, 1)), np.ones((3, 1)))
    p = build_prediction_matrices(m, 4)
    for t in range(1, 5):
        np.testing.assert_array_equal(p.Abold[p.stage_rows(t)], np.eye(3))


def test_block_structure_matches_powers():
    m = building_model()
    H = 4
    p = build_prediction_matrices(m, H)
    for t in range(1, H + 1):
        np.testing.assert_allclose(p.Abold[p.stage_rows(t)], np.linalg.matrix_power(m.A, t))
        for j in range(H):
            blk = p.Bv[p.stage_rows(t), 2 * j:2 * j + 2]
            ref = np.linalg.matrix_power(m.A, t - 1 - j) @ m.B_v if j < t else 0.0
            np.testing.assert_allclose(blk, ref, atol=1e-15)


def test_zero_horizon_rejected():
    with pytest.raises(ValueError):
        build_prediction_matrices(two_mass_spring_model(), 0)


def test_simulate_zero():
    m = two_mass_spring_model()
    np.testing.assert_array_equal(simulate_step(m, np.zeros(4), [0.0], [0.0]), 0.0)


def test_simulate_two_mass_x0():
    m = two_mass_spring_model()
    A = np.array([[1, 0, 0.1, 0], [0, 1, 0, 0.1], [-2, 0.2, 1, 0], [0.5, -0.05, 0, 1]])
    np.testing.assert_allclose(simulate_step(m, TWO_MASS_X0, [0.0], [0.0]), A @ TWO_MASS_X0)


def test_simulate_building_known_input():
    m = building_model()
    v = np.array([3.0, 8.9])
    Bv = np.array([[0.2536, 0.4596], [0.0070, 0.9840], [0.4450, 0.1287], [0.4477, 0.1225]])
    np.testing.assert_allclose(simulate_step(m, np.zeros(4), [0.0], [0.0], v), Bv @ v)


def test_simulate_dimension_error():
    with pytest.raises(ValueError):
        simulate_step(two_mass_spring_model(), np.zeros(3), [0.0], [0.0])


@pytest.mark.parametrize("model", [two_mass_spring_model(), building_model()])
def test_rollout_matches_stacked_form(model, rng):
    H = 6
    p = build_prediction_matrices(model, H)
    x0 = rng.standard_normal(model.n_x)
    u = rng.standard_normal((H, model.n_u))
    w = rng.standard_normal((H, model.n_w))
    v = rng.standard_normal((H, model.n_v))
    x, xs = x0, []
    for t in range(H):
        x = simulate_step(model, x, u[t], w[t], v[t])
        xs.append(x)
    np.testing.assert_allclose(np.concatenate(xs), p.predict(x0, u.ravel(), w.ravel(), v.ravel()),
                               atol=1e-10)


def test_model_json_round_trip(tmp_path):
    m = building_model()
    path = tmp_path / "m.json"
    path.write_text(json.dumps(m.to_dict()))
    m2 = load_model_json(path)
    np.testing.assert_array_equal(m2.B_v, m.B_v)
    assert two_mass_spring_model().to_dict().get("B_v") is None


def test_inconsistent_blocks_rejected():
    with pytest.raises(ValueError):
        LtiModel(np.eye(2), np.ones((3, 1)), np.ones((2, 1)))
