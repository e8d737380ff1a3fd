import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exodyad import checks
from exodyad.model import (
    NQ,
    ExoState,
    InvalidStateError,
    ModelParams,
    christoffel,
    com_kinematics,
    coriolis_matrix,
    dynamics_and_com,
    dynamics_terms,
    forward_kinematics,
    friction_torque,
    gravity_vector,
    kinetic_energy,
    mass_matrix,
    potential_energy,
    wearer_gravity_scale,
)
from exodyad.simulator import integrate_step, rk4_step

P = ModelParams()
angles = st.floats(-1.5, 1.5, allow_nan=False)
qvec = st.lists(angles, min_size=5, max_size=5).map(np.array)


def chain_walk(q, p):
    """CoM by walking the chain joint by joint, written without SEGMENT_MAP."""
    back, hip_l, knee_l, hip_r, knee_r = q
    trunk = back
    thigh_r = trunk - hip_r
    shank_r = thigh_r - knee_r
    thigh_l = trunk - hip_l
    shank_l = thigh_l - knee_l

    def d(a, length):
        return np.array([length * math.sin(a), length * math.cos(a)])

    knee_r_pos = d(shank_r, p.shank_length)
    hip = knee_r_pos + d(thigh_r, p.thigh_length)
    knee_l_pos = hip - d(thigh_l, p.thigh_length)
    parts = [
        (p.m_shank, d(shank_r, p.com_shank * p.shank_length)),
        (p.m_thigh, knee_r_pos + d(thigh_r, p.com_thigh * p.thigh_length)),
        (p.m_trunk, hip + d(trunk, p.com_trunk * p.trunk_length)),
        (p.m_thigh, hip - d(thigh_l, p.com_thigh * p.thigh_length)),
        (p.m_shank, knee_l_pos - d(shank_l, p.com_shank * p.shank_length)),
    ]
    mass = sum(m for m, _ in parts)
    return sum(m * x for m, x in parts) / mass


def test_upright_com_unit_segments():
    p = ModelParams(
        shank_length=1.0, thigh_length=1.0, trunk_length=1.0, m_shank=1.0, m_thigh=1.0, m_trunk=1.0
    )
    com = forward_kinematics(np.zeros(NQ), p)["com"]
    # shanks at 0.5, thighs at 1.5, trunk at 2.5
    assert com[0] == 0.0
    assert com[1] == pytest.approx((0.5 * 2 + 1.5 * 2 + 2.5) / 5, abs=1e-15)


def test_upright_com_default():
    com = forward_kinematics(np.zeros(NQ), P)["com"]
    assert com[1] == pytest.approx(60.6 / 64, abs=1e-15)


def test_shank_only_mass():
    p = ModelParams(m_thigh=0.0, m_trunk=0.0)
    # two shanks, both at 0.5 * shank length when upright
    assert forward_kinematics(np.zeros(NQ), p)["com"][1] == pytest.approx(0.5 * p.shank_length)


def test_deep_squat_against_chain_walk():
    q = np.array([0.3, 1.6, -1.9, 1.4, -2.0])
    np.testing.assert_allclose(forward_kinematics(q, P)["com"], chain_walk(q, P), atol=1e-12)


@given(qvec)
@settings(max_examples=60, deadline=None)
def test_chain_walk_random(q):
    np.testing.assert_allclose(forward_kinematics(q, P)["com"], chain_walk(q, P), atol=1e-12)


def test_nonfinite_rejected():
    with pytest.raises(InvalidStateError):
        forward_kinematics(np.array([0, np.nan, 0, 0, 0]), P)
    with pytest.raises(InvalidStateError):
        dynamics_terms(np.zeros(NQ), np.array([0, 0, np.inf, 0, 0]), 0.0, P)


def test_zero_velocity_com_terms():
    c = com_kinematics(np.array([0.1, 0.4, -0.6, 0.5, -0.7]), np.zeros(NQ), P)
    assert np.all(c.v_com == 0) and np.all(c.Jdot_qdot == 0)


def test_jdot_qdot_fd():
    rng = np.random.default_rng(11)
    eps = 1e-6
    for q, v in checks.random_states(100, rng):
        Jp = com_kinematics(q + v * eps, v, P).J_com
        Jm = com_kinematics(q - v * eps, v, P).J_com
        fd = (Jp - Jm) / (2 * eps) @ v
        np.testing.assert_allclose(com_kinematics(q, v, P).Jdot_qdot, fd, atol=1e-5)


def test_gravity_oracle():
    r = checks.check_gravity(n=300)
    assert r.passed, r.line()


def test_gravity_sign_flip_canary():
    r = checks.check_gravity(n=20, gravity=lambda q, p: -gravity_vector(q, p))
    assert not r.passed


def test_com_jacobian_oracle():
    r = checks.check_com_jacobian(n=300)
    assert r.passed, r.line()


def test_skew_symmetry():
    r = checks.check_skew(n=300)
    assert r.passed, r.line()


def test_bias_matches_christoffel():
    assert checks.check_bias_vector(n=100).passed


def test_christoffel_symmetric_in_last_two():
    G = christoffel(np.array([0.2, 0.3, -0.4, 0.5, -0.6]), P)
    np.testing.assert_allclose(G, G.transpose(0, 2, 1), atol=1e-13)


def test_b_zero_at_rest():
    d = dynamics_terms(np.array([0.2, 0.3, -0.4, 0.5, -0.6]), np.zeros(NQ), 0.0, P)
    assert np.all(d.b == 0.0)


def test_assistance_shifts_gravity():
    q = np.array([0.1, 0.5, -0.9, 0.5, -0.9])
    Jz = com_kinematics(q, np.zeros(NQ), P).Jz
    np.testing.assert_allclose(gravity_vector(q, P, 10.0), gravity_vector(q, P) - Jz * 10.0 * 9.81, atol=1e-12)
    d0, _ = dynamics_and_com(q, np.zeros(NQ), 0.0, P)
    d10, _ = dynamics_and_com(q, np.zeros(NQ), 10.0, P)
    np.testing.assert_allclose(d10.g_vec, d0.g_vec - Jz * 98.1, atol=1e-12)


def test_wearer_scale_keeps_backpack_row():
    s = wearer_gravity_scale(ModelParams(alpha=16.0))
    assert s[0] == 1.0
    np.testing.assert_allclose(s[1:], 1 - 16.0 / 64.0)


def test_mass_matrix_spd_in_box():
    rng = np.random.default_rng(3)
    for q, _ in checks.random_states(300, rng):
        M = mass_matrix(q, P)
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


def test_fast_terms_match_reference_forms():
    rng = np.random.default_rng(8)
    for q, v in checks.random_states(50, rng):
        d, c = dynamics_and_com(q, v, 0.0, P)
        np.testing.assert_allclose(d.M, mass_matrix(q, P), atol=1e-12)
        np.testing.assert_allclose(d.g_vec, gravity_vector(q, P), atol=1e-10)
        ref = com_kinematics(q, v, P)
        np.testing.assert_allclose(c.J_com, ref.J_com, atol=1e-14)
        np.testing.assert_allclose(c.Jdot_qdot, ref.Jdot_qdot, atol=1e-13)


def test_near_singular_mass_matrix_warns():
    p = ModelParams(m_shank=0.0, m_thigh=0.0, inertia_shank=0.0, inertia_thigh=0.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        dynamics_terms(np.zeros(NQ), np.zeros(NQ), 0.0, p)
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)


def test_friction_examples():
    p = ModelParams(viscous=(1.0,) * 4, coulomb=(0.5,) * 4, friction_smoothing=0.01)
    tau = friction_torque(np.array([1.0, 0, 0, 0]), p)
    assert tau[0] == pytest.approx(-(1 + 0.5 * math.tanh(100)), abs=1e-12)
    assert np.all(friction_torque(np.zeros(4), P) == 0)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_friction_odd(v):
    v = np.array(v)
    assert np.array_equal(friction_torque(-v, P), -friction_torque(v, P))


# energy audits near the hanging equilibrium (left leg down, body below the pinned foot)
FRICTIONLESS = ModelParams(viscous=(0.0,) * 4, coulomb=(0.0,) * 4)


def _energy(s):
    return kinetic_energy(s.q, s.qdot, FRICTIONLESS) + potential_energy(s.q, FRICTIONLESS)


def _hanging(amp):
    return ExoState(np.array([math.pi + amp, math.pi + amp, -amp, amp, -amp]), np.zeros(NQ))


def test_energy_semi_implicit_euler():
    s = _hanging(0.01)
    e0, worst = _energy(s), 0.0
    for _ in range(2500):
        s = integrate_step(s, np.zeros(4), np.zeros(NQ), dynamics_terms(s.q, s.qdot, 0.0, FRICTIONLESS), 0.002, FRICTIONLESS)
        worst = max(worst, abs(_energy(s) - e0))
    assert worst < 1e-3


def test_energy_rk4():
    s = _hanging(0.05)
    e0, worst = _energy(s), 0.0
    for _ in range(2500):
        s = rk4_step(s, np.zeros(4), np.zeros(NQ), 0.002, FRICTIONLESS)
        worst = max(worst, abs(_energy(s) - e0))
    assert worst < 1e-6
