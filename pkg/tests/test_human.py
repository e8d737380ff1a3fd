import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exodyad.human import (
    HIGH_SKILL,
    PostureTable,
    SkillParams,
    Surrogate,
    reachable_heights,
    sts_inverse_kinematics,
)
from exodyad.model import NQ, ExoState, ModelParams, forward_kinematics, gravity_vector

P = ModelParams()
Z_LO, Z_HI = reachable_heights(P)


@given(st.floats(Z_LO + 1e-6, Z_HI - 1e-6))
@settings(max_examples=40, deadline=None)
def test_ik_round_trip(z):
    q, clamped = sts_inverse_kinematics(z, P)
    assert not clamped
    com = forward_kinematics(q, P)["com"]
    assert com[1] == pytest.approx(z, abs=1e-6)
    assert abs(com[0]) <= 1e-6
    assert q[0] == 0.0 and q[1] == q[3] and q[2] == q[4]


def test_ik_standing_is_straight():
    q, clamped = sts_inverse_kinematics(Z_HI, P)
    assert not clamped
    np.testing.assert_allclose(q, 0.0, atol=1e-6)


def test_ik_clamps_out_of_range():
    assert sts_inverse_kinematics(Z_HI + 0.1, P)[1]
    q, clamped = sts_inverse_kinematics(0.1, P)
    assert clamped
    assert forward_kinematics(q, P)["com"][1] == pytest.approx(Z_LO, abs=1e-6)


def test_ik_monotone_knee():
    zs = np.linspace(Z_LO + 0.01, Z_HI - 0.01, 25)
    knees = [-sts_inverse_kinematics(z, P)[0][2] for z in zs]
    assert np.all(np.diff(knees) < 0)


def test_posture_table_matches_bisection():
    tab = PostureTable(P)
    for z in np.linspace(0.6, 0.93, 30):
        np.testing.assert_allclose(tab(z), sts_inverse_kinematics(z, P)[0], atol=1e-4)


def _quiet(**kw):
    base = dict(noise_std=0.0, reaction_delay=0.0, strength=1e6)
    base.update(kw)
    return SkillParams(**base)


def test_zero_error_gives_gravity_share():
    q = np.array([0.05, 0.6, -1.0, 0.6, -1.0])
    s = Surrogate(P, _quiet(), 0.002)
    tau = s.human_torque(ExoState(q, np.zeros(NQ)), q)
    np.testing.assert_allclose(tau, gravity_vector(q, P), atol=1e-12)


def test_wearer_share_drops_with_assistance():
    pa = ModelParams(alpha=16.0)
    q = np.array([0.05, 0.6, -1.0, 0.6, -1.0])
    s = Surrogate(pa, _quiet(), 0.002)
    tau = s.human_torque(ExoState(q, np.zeros(NQ)), q)
    g = gravity_vector(q, pa)
    assert tau[0] == pytest.approx(g[0])
    np.testing.assert_allclose(tau[1:], 0.75 * g[1:], atol=1e-12)


def test_kp_linear():
    q = np.zeros(NQ)
    err = np.array([0.0, 0.01, -0.02, 0.03, -0.01])
    st_ = ExoState(q, np.zeros(NQ))
    g = gravity_vector(q, P)
    t1 = Surrogate(P, _quiet(kp=20.0), 0.002).human_torque(st_, q + err) - g
    t2 = Surrogate(P, _quiet(kp=40.0), 0.002).human_torque(st_, q + err) - g
    np.testing.assert_allclose(t2[1:], 2 * t1[1:], atol=1e-12)


def test_reaction_delay_ticks():
    s = Surrogate(P, _quiet(reaction_delay=0.01, kd=0.0), 0.002)
    assert s.delay_ticks == 5
    st_ = ExoState(np.zeros(NQ), np.zeros(NQ))
    g = gravity_vector(st_.q, P)
    step = np.array([0, 0.1, 0, 0, 0])
    out = [s.human_torque(st_, step if k > 0 else np.zeros(NQ))[1] - g[1] for k in range(8)]
    assert out[:6] == [0.0] * 6
    assert out[6] == pytest.approx(60.0 * 0.1)


def test_noise_is_seeded():
    st_ = ExoState(np.zeros(NQ), np.zeros(NQ))
    runs = []
    for _ in range(2):
        s = Surrogate(P, SkillParams(seed=9, noise_std=2.0), 0.002)
        runs.append(np.array([s.human_torque(st_, np.zeros(NQ)) for _ in range(200)]))
    np.testing.assert_array_equal(runs[0], runs[1])
    other = Surrogate(P, SkillParams(seed=10, noise_std=2.0), 0.002)
    assert not np.array_equal(runs[0][-1], other.human_torque(st_, np.zeros(NQ)))


def test_noise_stationary_std():
    s = Surrogate(P, SkillParams(noise_std=3.0, noise_cutoff=5.0, strength=1e6), 0.002)
    xs = np.array([s._step_noise().copy() for _ in range(100_000)])
    assert xs[5000:].std() == pytest.approx(3.0, rel=0.1)


def test_strength_clip():
    s = Surrogate(P, _quiet(strength=10.0, kp=1000.0), 0.002)
    tau = s.human_torque(ExoState(np.zeros(NQ), np.zeros(NQ)), np.full(NQ, 0.5))
    assert np.abs(tau).max() == 10.0


def test_follow_rate_limit():
    s = Surrogate(P, HIGH_SKILL, 0.002)
    assert s.follow(0.80) == 0.80
    z = [s.follow(0.92) for _ in range(300)]
    np.testing.assert_allclose(np.diff(z[:150]), 0.3 * 0.002, atol=1e-15)
    assert z[-1] == pytest.approx(0.92)
    s.reset()
    assert s.follow(0.85) == 0.85


def test_skill_validation():
    with pytest.raises(ValueError):
        SkillParams(kp=-1.0)
    with pytest.raises(ValueError):
        SkillParams(kp=(1.0, 2.0))
    with pytest.raises(ValueError):
        SkillParams(target_rate=0.0)
