import numpy as np
import pytest

import rtrajopt._kernels as kernels
from rtrajopt.constraints import BoxFace, CircularObstacle, ConstraintSet
from rtrajopt.lintraj import PolicyMatrix, build_blocks, stacked_response
from rtrajopt.models import Car, LinearModel, Unicycle, linearize_along, rollout
from rtrajopt.monte import (Policy, collect_linearization_errors, evaluate_satisfaction,
                            run_rollouts, sample_zetas, simulate_batch,
                            simulate_closed_loop)
from rtrajopt.uncertainty import UncertaintySet


def make_policy(model, rng, T=8, gain_scale=0.1, u_scale=0.5, x0=None):
    u_bar = u_scale * rng.standard_normal((T, model.n_u))
    if model.name == "car":
        u_bar[:, 0] *= 0.4  # keep steering in-domain
    x0 = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float)
    if model.name == "car":
        x0 = x0.copy()
        x0[3] = 1.0
    nominal = rollout(model, x0, u_bar)
    gains = gain_scale * rng.standard_normal((T, model.n_u, model.n_x))
    return Policy(u_bar=u_bar, gains=gains, nominal=nominal)


def make_uset(model, T, rng, tau=0.02, n_z=3):
    dim = (T + 1) * model.n_x
    return UncertaintySet(rng.uniform(-1, 1, (dim, n_z)), np.eye(n_z), tau)


def test_zero_disturbance_reproduces_nominal(rng):
    model = Unicycle(dt=0.02)
    policy = make_policy(model, rng)
    rec = simulate_closed_loop(model, policy, np.zeros(9 * 3), policy.nominal.states[0])
    assert np.array_equal(rec.states, policy.nominal.states)
    assert np.array_equal(rec.controls, policy.u_bar)


def test_open_loop_controls_equal_ubar(rng):
    model = Unicycle(dt=0.02)
    policy = make_policy(model, rng, gain_scale=0.0)
    zeta = 0.05 * rng.standard_normal(27)
    rec = simulate_closed_loop(model, policy, zeta, policy.nominal.states[0])
    assert np.array_equal(rec.controls, policy.u_bar)
    assert not np.allclose(rec.states, policy.nominal.states)


def test_reconstructed_equals_injected(rng):
    model = Unicycle(dt=0.02)
    T = 8
    policy = make_policy(model, rng, T=T)
    for _ in range(100):
        zeta = 0.05 * rng.standard_normal((T + 1) * 3)
        rec = simulate_closed_loop(model, policy, zeta, policy.nominal.states[0])
        d = rec.reconstructed_disturbances(model, policy.nominal.states[0])
        assert np.max(np.abs(d.reshape(-1) - zeta)) < 1e-12


@pytest.mark.parametrize("model_fn", [lambda: Unicycle(dt=0.02), lambda: Car(dt=0.02)])
def test_kernel_matches_python_fallback(model_fn, rng, monkeypatch):
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    model = model_fn()
    T = 10
    policy = make_policy(model, rng, T=T, u_scale=0.3)
    zetas = 0.02 * rng.standard_normal((20, (T + 1) * model.n_x))
    monkeypatch.setenv("RTRAJOPT_NUMBA", "1")
    fast = simulate_batch(model, policy, zetas, policy.nominal.states[0])
    monkeypatch.setenv("RTRAJOPT_NUMBA", "0")
    slow = simulate_batch(model, policy, zetas, policy.nominal.states[0])
    for a, b in zip(fast, slow):
        assert np.max(np.abs(a.states - b.states)) < 1e-12
        assert np.max(np.abs(a.controls - b.controls)) < 1e-12


def test_env_flag_selects_fallback(monkeypatch):
    monkeypatch.setenv("RTRAJOPT_NUMBA", "0")
    assert not kernels.numba_enabled()
    monkeypatch.setenv("RTRAJOPT_NUMBA", "numpy")
    assert not kernels.numba_enabled()
    monkeypatch.delenv("RTRAJOPT_NUMBA")
    assert kernels.numba_enabled() == kernels.HAVE_NUMBA


def test_linearization_errors_vanish_for_linear_model(rng):
    A = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    model = LinearModel(dt=0.1, params={"A": A.tolist(), "B": B.tolist()})
    T = 6
    policy = make_policy(model, rng, T=T)
    A_list, B_list = linearize_along(model, policy.nominal)
    blocks = build_blocks(A_list, B_list)
    zetas = 0.1 * rng.standard_normal((40, (T + 1) * 3))
    clouds = collect_linearization_errors(model, policy, blocks, zetas)
    for cloud in clouds:
        assert np.max(np.abs(cloud)) < 1e-10


def test_linearization_errors_zero_at_zero_zeta(rng):
    model = Unicycle(dt=0.02)
    policy = make_policy(model, rng)
    A_list, B_list = linearize_along(model, policy.nominal)
    blocks = build_blocks(A_list, B_list)
    clouds = collect_linearization_errors(model, policy, blocks, np.zeros((1, 27)))
    for cloud in clouds:
        assert np.max(np.abs(cloud)) == 0.0


def test_linearization_errors_grow_along_horizon():
    rng = np.random.default_rng(42)
    model = Unicycle(dt=0.05)
    T = 12
    u_bar = np.tile([1.0, 0.6], (T, 1))
    nominal = rollout(model, np.zeros(3), u_bar)
    gains = 0.05 * rng.standard_normal((T, 2, 3))
    policy = Policy(u_bar=u_bar, gains=gains, nominal=nominal)
    A_list, B_list = linearize_along(model, nominal)
    blocks = build_blocks(A_list, B_list)
    uset = make_uset(model, T, rng, tau=0.05)
    zetas = uset.sample(np.random.default_rng(1), 500)
    clouds = collect_linearization_errors(model, policy, blocks, zetas)
    assert np.linalg.norm(clouds[-1], axis=1).mean() >= np.linalg.norm(clouds[1], axis=1).mean()


def test_closed_loop_matches_compact_form_on_linear_systems():
    for trial in range(50):
        rng = np.random.default_rng(7000 + trial)
        n_x, n_u, T = 3, 2, 6
        A = np.eye(n_x) + 0.2 * rng.standard_normal((n_x, n_x))
        B = rng.standard_normal((n_x, n_u))
        model = LinearModel(dt=0.1, params={"A": A.tolist(), "B": B.tolist()})
        policy = make_policy(model, rng, T=T)
        A_list, B_list = linearize_along(model, policy.nominal)
        blocks = build_blocks(A_list, B_list)
        zeta = 0.3 * rng.standard_normal((T + 1) * n_x)
        rec = simulate_closed_loop(model, policy, zeta, policy.nominal.states[0])
        deviation = (rec.states - policy.nominal.states).reshape(-1)
        predicted = stacked_response(blocks, policy.policy_matrix(), np.zeros(T * n_u), zeta)
        assert np.max(np.abs(deviation - predicted)) < 1e-10


def test_substream_sampling_order_independent(rng):
    model = Unicycle(dt=0.02)
    T = 5
    uset = make_uset(model, T, rng)
    all_z = sample_zetas(uset, 20, master_seed=11)
    # sample index i draws the same zeta no matter how many samples run
    fewer = sample_zetas(uset, 7, master_seed=11)
    assert np.array_equal(all_z[:7], fewer)


def test_run_rollouts_deterministic(rng):
    model = Unicycle(dt=0.02)
    T = 6
    policy = make_policy(model, rng, T=T)
    uset = make_uset(model, T, rng)
    a = run_rollouts(model, policy, uset, 30, master_seed=3)
    b = run_rollouts(model, policy, uset, 30, master_seed=3)
    for r1, r2 in zip(a, b):
        assert np.array_equal(r1.states, r2.states)


def test_evaluate_satisfaction_counts(rng):
    model = Unicycle(dt=0.02)
    T = 6
    policy = make_policy(model, rng, T=T, u_scale=0.0, gain_scale=0.0)
    cs = ConstraintSet(T, 3, faces=[BoxFace(dim=0, bound=-1.0, side=1, step=T)])
    uset = make_uset(model, T, rng, tau=0.0)
    records = run_rollouts(model, policy, uset, 5, master_seed=0)
    report = evaluate_satisfaction(records, cs)
    # x stays at 0 > -1, so the face row x <= -1 is violated by everyone
    assert report.satisfaction == 0.0
    assert report.violation_counts[0] == 5
    assert report.worst_violation == pytest.approx(1.0)
    cs_ok = ConstraintSet(T, 3, faces=[BoxFace(dim=0, bound=1.0, side=1, step=T)])
    report_ok = evaluate_satisfaction(run_rollouts(model, policy, uset, 5, 0), cs_ok)
    assert report_ok.satisfaction == 1.0


def test_satisfaction_tau_zero_single_realization(rng):
    model = Unicycle(dt=0.02)
    T = 6
    policy = make_policy(model, rng, T=T)
    cs = ConstraintSet(T, 3, obstacles=[CircularObstacle(center=(50, 50), radius=1.0)])
    uset = make_uset(model, T, rng, tau=0.0)
    report = evaluate_satisfaction(run_rollouts(model, policy, uset, 100, 0), cs)
    assert report.satisfaction in (0.0, 1.0)


def test_report_dict_shape(rng):
    model = Unicycle(dt=0.02)
    T = 4
    policy = make_policy(model, rng, T=T)
    cs = ConstraintSet(T, 3, faces=[BoxFace(dim=1, bound=10.0, side=1, step=T)])
    uset = make_uset(model, T, rng)
    report = evaluate_satisfaction(run_rollouts(model, policy, uset, 10, 0), cs)
    d = report.to_dict()
    assert set(d) >= {"n_samples", "n_satisfied", "satisfaction", "rows", "worst_violation"}
    assert d["rows"]["labels"] == cs.labels()
