import numpy as np
import pytest

from rtrajopt.sco import OuterParams, optimize, update_penalty, update_trust_region
from rtrajopt.scenario import Scenario


def base_scenario(**overrides):
    d = {
        "name": "test",
        "model": {"name": "double_integrator", "dt": 0.1, "T": 8},
        "x0": [0.0, 0.0, 0.0, 0.0],
        "cost": {"r_u": 1.0, "r_k": 1.0},
        "uncertainty": {"tau": 0.05, "n_z": 3, "gamma_seed": 5, "S": "identity"},
        "constraints": {"terminal_box": [{"dim": 0, "lo": 0.4, "hi": 0.8},
                                         {"dim": 1, "lo": -0.2, "hi": 0.2}]},
        "mode": "nrto",
    }
    d.update(overrides)
    return Scenario.from_dict(d)


def test_outer_params_validation():
    with pytest.raises(ValueError, match="alpha"):
        OuterParams(alpha=0.3)
    with pytest.raises(ValueError, match="beta"):
        OuterParams(beta=1.0)
    with pytest.raises(ValueError, match="mode"):
        OuterParams(mode="bogus")
    p = OuterParams()
    assert p.rho == p.rho0


def test_trust_update_guard_false():
    p = OuterParams(r_trust=1.0, alpha=0.5, eta1=10.0)
    q = update_trust_region(p, delta_u_norm=0.5, residual=1.0)  # 0.5 < 10*1
    assert q.r_trust == 1.0


def test_trust_update_shrinks():
    p = OuterParams(r_trust=1.0, alpha=0.5, r_min=0.1)
    q = update_trust_region(p, delta_u_norm=1.0, residual=0.0)
    assert q.r_trust == 0.5


def test_trust_update_floor_clamps():
    p = OuterParams(r_trust=0.15, alpha=0.5, r_min=0.1)
    q = update_trust_region(p, delta_u_norm=1.0, residual=0.0)
    assert q.r_trust == 0.1


def test_trust_update_literal_reading():
    p = OuterParams(r_trust=5.0, alpha=0.5, r_min=0.1, literal_updates=True)
    q = update_trust_region(p, delta_u_norm=1.0, residual=0.0)
    assert q.r_trust == 0.1  # min(2.5, 0.1) jumps straight to the floor


def test_penalty_update_guard_false():
    p = OuterParams(rho0=1.0, beta=10.0, eta2=0.1)
    q = update_penalty(p, delta_u_norm=1.0, residual=1.0)  # 1 > 0.1*1
    assert q.rho == 1.0


def test_penalty_update_grows_and_caps():
    p = OuterParams(rho0=1.0, beta=10.0, rho_max=1e6)
    q = update_penalty(p, delta_u_norm=0.0, residual=1.0)
    assert q.rho == 10.0
    import dataclasses
    p2 = dataclasses.replace(p, rho=5e5)
    q2 = update_penalty(p2, delta_u_norm=0.0, residual=1.0)
    assert q2.rho == 1e6


def test_penalty_update_literal_reading():
    p = OuterParams(rho0=1.0, beta=10.0, rho_max=1e6, literal_updates=True)
    q = update_penalty(p, delta_u_norm=0.0, residual=1.0)
    assert q.rho == 1e6


def test_nto_unconstrained_converges_first_iteration():
    scn = base_scenario(constraints={}, mode="nto")
    policy, log = optimize(scn)
    assert log.converged
    assert log.iterations == 1
    assert log.records[0].delta_u_norm <= 1e-6
    assert np.max(np.abs(policy.u_bar)) <= 1e-6
    assert np.max(np.abs(policy.gains)) == 0.0  # tau = 0 keeps K at zero


def test_nrto_double_integrator_converges():
    scn = base_scenario()
    policy, log = optimize(scn)
    assert log.converged
    assert log.records[-1].delta_u_norm <= 1e-4
    # terminal box respected by the nominal with robust margin
    xT = policy.nominal.states[-1]
    assert 0.4 < xT[0] < 0.8
    assert -0.2 < xT[1] < 0.2
    # feedback engaged
    assert np.max(np.abs(policy.gains)) > 1e-6


def test_log_invariants_monotone_schedules():
    scn = base_scenario()
    _, log = optimize(scn)
    r = [rec.r_trust for rec in log.records]
    rho = [rec.rho for rec in log.records]
    assert all(b <= a for a, b in zip(r, r[1:]))
    assert all(b >= a for a, b in zip(rho, rho[1:]))
    assert min(r) >= OuterParams().r_min
    assert max(rho) <= OuterParams().rho_max


def test_termination_record_consistent():
    scn = base_scenario()
    _, log = optimize(scn)
    assert log.status == "converged"
    assert log.records[-1].delta_u_norm <= 1e-4


def test_nominal_consistency_of_returned_policy():
    scn = base_scenario()
    policy, _ = optimize(scn)
    model = scn.build_model()
    x = policy.nominal.states
    for k in range(scn.T):
        np.testing.assert_array_equal(x[k + 1], model.step(x[k], policy.u_bar[k]))
    np.testing.assert_array_equal(x[0], np.asarray(scn.x0))


def test_nto_equals_nrto_at_tau_zero():
    scn_zero = base_scenario(uncertainty={"tau": 0.0, "n_z": 3, "gamma_seed": 5,
                                          "S": "identity"})
    p1, log1 = optimize(scn_zero, mode="nto")
    p2, log2 = optimize(scn_zero, mode="nrto")
    assert np.array_equal(p1.u_bar, p2.u_bar)
    assert np.array_equal(p1.gains, p2.gains)
    assert [r.to_dict() for r in log1.records] == [r.to_dict() for r in log2.records]


def test_rerun_bit_identical():
    scn = base_scenario()
    p1, log1 = optimize(scn)
    p2, log2 = optimize(scn)
    assert np.array_equal(p1.u_bar, p2.u_bar)
    assert np.array_equal(p1.gains, p2.gains)
    assert [r.to_dict() for r in log1.records] == [r.to_dict() for r in log2.records]


def test_nrto_le_requires_error_sets():
    scn = base_scenario()
    with pytest.raises(ValueError, match="error ellipsoids"):
        optimize(scn, mode="nrto-le")


def test_nrto_le_tightens_rows():
    from rtrajopt.uncertainty import ErrorEllipsoid
    scn = base_scenario()
    p_plain, _ = optimize(scn)
    n_x = 4
    sets = [ErrorEllipsoid(np.zeros(n_x), np.eye(n_x), 0.002) for _ in range(scn.T + 1)]
    p_le, log_le = optimize(scn, mode="nrto-le", error_sets=sets)
    assert log_le.converged
    # the LE nominal sits strictly deeper inside the box
    cs = scn.build_constraints()
    g_plain = cs.evaluate(p_plain.nominal.states)
    g_le = cs.evaluate(p_le.nominal.states)
    assert g_le.max() < g_plain.max()


def test_max_outer_flagged():
    scn = base_scenario(outer={"max_outer": 1, "eps_u": 1e-12})
    policy, log = optimize(scn)
    assert log.status == "max_outer"
    assert log.iterations == 1
    assert policy.u_bar.shape == (8, 2)
