import math

import numpy as np
import pytest

from exodyad.balance import (
    BalanceLimits,
    dcm,
    dcm_constraint_rows,
    lookahead_bound,
    time_constant,
    variable_limits,
)
from exodyad.model import NQ, ComKinematics, ExoState


def _com(p, v, J=None):
    J = np.zeros((2, NQ)) if J is None else J
    return ComKinematics(np.asarray(p, float), np.asarray(v, float), J, np.zeros(2))


def test_dcm_examples():
    c = _com([0.02, 0.9], [0.0, 0.0])
    np.testing.assert_array_equal(dcm(c, 0.9).p_dcm, c.p_com)
    c = _com([0.0, 0.9], [0.3, -0.1])
    np.testing.assert_allclose(dcm(c, 9.81).p_dcm, [0.3, 0.8], atol=1e-15)
    c = _com([0.0, 0.9], [0.2, 0.0])
    off = dcm(c, 0.9).p_dcm[0]
    assert off == pytest.approx(0.2 * math.sqrt(0.9 / 9.81), abs=1e-15)
    assert off == pytest.approx(0.0606, abs=1e-4)


def test_time_constant_needs_height():
    with pytest.raises(ValueError):
        time_constant(0.0)


def test_tent():
    lim = BalanceLimits(z_max=1.0, a_z=1.0)
    assert variable_limits(lim.x_eq, lim) == (1.0, lim.theta_max)
    assert variable_limits(0.1, lim)[0] == pytest.approx(0.9, abs=1e-15)
    for d in (0.01, 0.07, 0.3):
        assert variable_limits(lim.x_eq + d, lim) == variable_limits(lim.x_eq - d, lim)


def _rows(p_dcm_x, v, lim, beta=20, dt=0.002):
    h = 9.81  # T = 1 so p_dcm = p_com + v_com
    c = _com([p_dcm_x - v, 0.9], [v, 0.0], J=np.ones((2, NQ)))
    D, lo, hi = dcm_constraint_rows(ExoState(np.zeros(NQ), np.zeros(NQ)), c, lim, h, beta, dt, g=9.81)
    return lo, hi


def test_box_center_symmetric():
    lim = BalanceLimits(p_plus=0.25, p_minus=0.25, z_max=2.0, z_min=-0.2)
    lo, hi = _rows(0.0, 0.0, lim)
    half = 0.25
    assert hi[0] == pytest.approx(2 * half / (20 * 0.002) ** 2)
    assert lo[0] == pytest.approx(-hi[0])


def test_on_forward_bound_moving_out():
    lim = BalanceLimits(z_max=2.0, z_min=-0.2)
    lo, hi = _rows(lim.x_forward, 0.1, lim)
    assert hi[0] < 0


def test_beta_scaling():
    assert lookahead_bound(0.1, 0.0, 0.0, 40, 0.002) == pytest.approx(0.25 * lookahead_bound(0.1, 0.0, 0.0, 20, 0.002))
    with pytest.raises(ValueError):
        lookahead_bound(0.1, 0.0, 0.0, 0.5, 0.002)


def test_limits_validation_and_resolve():
    with pytest.raises(ValueError):
        BalanceLimits(p_plus=0.0)
    from exodyad.model import ModelParams

    r = BalanceLimits().resolve(ModelParams())
    assert r.z_max == pytest.approx(ModelParams().h + 0.01)
    assert r.z_min == pytest.approx(0.50)
