import numpy as np
import pytest

from rtrajopt.models import (Car, DoubleIntegrator, LinearModel, ModelDomainError,
                             ModelError, Unicycle, make_model, rollout)

from conftest import finite_difference_jacobians


def random_point(model, rng, scale=1.0):
    x = scale * rng.standard_normal(model.n_x)
    u = scale * rng.standard_normal(model.n_u)
    if model.name == "car":
        # stay inside the rolling-distance domain
        x[3] = rng.uniform(-5.0, 5.0)
        u[0] = rng.uniform(-1.2, 1.2)
    return x, u


def test_unicycle_step_straight():
    m = Unicycle(dt=0.01)
    np.testing.assert_allclose(m.step([0, 0, 0], [1, 0]), [0.01, 0, 0])


def test_unicycle_step_heading_up():
    m = Unicycle(dt=0.01)
    out = m.step([0, 0, np.pi / 2], [2, 1])
    np.testing.assert_allclose(out, [0, 0.02, np.pi / 2 + 0.01], atol=1e-15)


def test_car_rolling_distance_corrected():
    m = Car(dt=0.03)
    out = m.step([0, 0, 0, 1.0], [0.0, 0.0])
    # scalar oracle: c_b = c_f cos w + c_len - sqrt(c_len^2 - (c_f cos w)^2)
    cf = 1.0 * 0.03
    cb = cf + 0.75 - np.sqrt(0.75**2 - cf**2)
    assert abs(cb - 0.030600240192192207) < 1e-15  # approx 0.03060
    np.testing.assert_allclose(out, [cb, 0.0, 0.0, 1.0], atol=1e-15)


def test_car_paper_verbatim_flag():
    m = Car(dt=0.03, params={"formula": "paper_verbatim"})
    cf = 0.03
    cb = cf + 0.75 + np.sqrt(0.75**2 - cf**2)
    np.testing.assert_allclose(m.step([0, 0, 0, 1.0], [0, 0])[0], cb)


def test_car_domain_error_names_problem():
    m = Car(dt=1.0)
    with pytest.raises(ModelDomainError, match="rolling distance"):
        m.step([0, 0, 0, 10.0], [0.0, 0.0])  # c_f = 10 > c_len


def test_step_dimension_mismatch():
    m = Unicycle(dt=0.1)
    with pytest.raises(ModelError):
        m.step([0, 0], [1, 0])
    with pytest.raises(ModelError):
        m.step([0, 0, 0], [1])


def test_unicycle_jacobian_hand_values():
    dt = 0.05
    m = Unicycle(dt=dt)
    A, B = m.jacobians([0, 0, 0], [1, 0])
    assert A[0][2] == 0.0
    assert A[1][2] == dt
    assert B[0][0] == dt
    assert B[2][1] == dt


def test_unicycle_jacobian_independent_of_v_in_B():
    m = Unicycle(dt=0.02)
    th = 0.7
    _, B0 = m.jacobians([0, 0, th], [0.0, 0.3])
    _, B5 = m.jacobians([0, 0, th], [5.0, 0.3])
    assert B0[0, 0] == pytest.approx(np.cos(th) * 0.02)
    np.testing.assert_allclose(B0, B5)


@pytest.mark.parametrize("make", [
    lambda: Unicycle(dt=0.01),
    lambda: Car(dt=0.03),
    lambda: Car(dt=0.03, params={"formula": "paper_verbatim"}),
    lambda: DoubleIntegrator(dt=0.1),
])
def test_jacobians_match_finite_differences(make, rng):
    model = make()
    for _ in range(100):
        x, u = random_point(model, rng)
        A, B = model.jacobians(x, u)
        A_fd, B_fd = finite_difference_jacobians(model, x, u)
        scale_A = np.maximum(np.abs(A_fd), 1e-3)
        scale_B = np.maximum(np.abs(B_fd), 1e-3)
        assert np.max(np.abs(A - A_fd) / scale_A) < 1e-5
        assert np.max(np.abs(B - B_fd) / scale_B) < 1e-5


def test_rollout_single_step():
    m = DoubleIntegrator(dt=0.1)
    x0 = np.array([1.0, 2.0, 0.0, 0.0])
    traj = rollout(m, x0, [[0.5, -0.5]])
    np.testing.assert_array_equal(traj.states[0], x0)
    np.testing.assert_array_equal(traj.states[1], m.step(x0, [0.5, -0.5]))


def test_rollout_straight_line():
    m = Unicycle(dt=0.01)
    traj = rollout(m, [0, 0, 0], np.tile([1.0, 0.0], (30, 1)))
    np.testing.assert_allclose(traj.states[-1], [0.3, 0, 0], atol=1e-12)


def test_rollout_restep_bit_exact(rng):
    m = Unicycle(dt=0.01)
    controls = rng.standard_normal((20, 2))
    traj = rollout(m, rng.standard_normal(3), controls)
    for k in range(20):
        assert np.array_equal(traj.states[k + 1], m.step(traj.states[k], controls[k]))


def test_rollout_deterministic(rng):
    m = Car(dt=0.03)
    controls = 0.2 * rng.standard_normal((15, 2))
    x0 = [0, 0, 0.1, 1.0]
    a = rollout(m, x0, controls)
    b = rollout(m, x0, controls)
    assert np.array_equal(a.states, b.states)


def test_rollout_stays_on_line_without_turning(rng):
    th = 0.83
    m = Unicycle(dt=0.01)
    v = rng.uniform(0.5, 2.0, size=(40, 1))
    controls = np.hstack([v, np.zeros((40, 1))])
    traj = rollout(m, [0.3, -0.2, th], controls)
    d = traj.states[:, :2] - np.array([0.3, -0.2])
    cross = d[:, 0] * np.sin(th) - d[:, 1] * np.cos(th)
    assert np.max(np.abs(cross)) < 1e-13
    np.testing.assert_array_equal(traj.states[:, 2], th)


def test_rollout_domain_error_carries_timestep():
    m = Car(dt=0.1)
    controls = np.zeros((5, 2))
    controls[:, 1] = 20.0  # accelerate until c_f > c_len at step 4 (v = 9)
    with pytest.raises(ModelDomainError, match="timestep 4"):
        rollout(m, [0, 0, 0, 1.0], controls)


def test_registry_round_trip():
    m = make_model("unicycle", dt=0.05)
    assert isinstance(m, Unicycle)
    with pytest.raises(ModelError, match="unknown model"):
        make_model("hovercraft", dt=0.1)


def test_linear_model_exactness(rng):
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    m = LinearModel(dt=0.1, params={"A": A.tolist(), "B": B.tolist()})
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    np.testing.assert_allclose(m.step(x, u), A @ x + B @ u)
    Aj, Bj = m.jacobians(x, u)
    np.testing.assert_array_equal(Aj, A)
    np.testing.assert_array_equal(Bj, B)
