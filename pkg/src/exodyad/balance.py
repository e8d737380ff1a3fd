"""Divergent Component of Motion (DCM) and the balance inequality rows.

All rows act on the QP decision vector x = (qddot, tau_motor) in R^9 and are
returned in two-sided form ``lower <= D x <= upper``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import GRAVITY, NQ, NU, ComKinematics, ExoState, ModelParams


@dataclass(frozen=True)
class BalanceLimits:
    """Sagittal support box for the DCM plus the tent-shaped upper limits.

    ``p_plus``/``p_minus`` are forward/backward distances from ``x_eq``.
    ``z_max`` defaults to the standing CoM height + 1 cm, ``z_min`` to the
    seated CoM height minus ``seat_margin`` (resolved by :meth:`resolve`).
    """

    p_plus: float = 0.2
    p_minus: float = 0.3
    x_eq: float = 0.0
    z_max: float | None = None
    z_min: float | None = None
    theta_max: float = 0.35
    a_z: float = 0.8
    a_theta: float = 1.5
    seat_com_height: float = 0.55
    seat_margin: float = 0.05

    def __post_init__(self):
        if not (self.p_plus > 0 and self.p_minus > 0):
            raise ValueError("p_plus and p_minus must be > 0")
        if self.a_z < 0 or self.a_theta < 0:
            raise ValueError("tent slopes must be >= 0")

    def resolve(self, params: ModelParams) -> "BalanceLimits":
        z_max = params.h + 0.01 if self.z_max is None else self.z_max
        z_min = self.seat_com_height - self.seat_margin if self.z_min is None else self.z_min
        return replace(self, z_max=z_max, z_min=z_min)

    @property
    def x_forward(self) -> float:
        return self.x_eq + self.p_plus

    @property
    def x_backward(self) -> float:
        return self.x_eq - self.p_minus


@dataclass(frozen=True)
class DcmState:
    p_dcm: np.ndarray
    p_com: np.ndarray
    v_com: np.ndarray


def time_constant(h: float, g: float = GRAVITY) -> float:
    if not h > 0:
        raise ValueError("pendulum height must be > 0")
    return math.sqrt(h / g)


def dcm(com: ComKinematics, h: float, g: float = GRAVITY) -> DcmState:
    T = time_constant(h, g)
    return DcmState(p_dcm=com.p_com + T * com.v_com, p_com=com.p_com.copy(), v_com=com.v_com.copy())


def variable_limits(x_com: float, lim: BalanceLimits) -> tuple[float, float]:
    """Vertical DCM upper bound and backpack-angle upper bound, both peaked at x_eq."""
    d = x_com - lim.x_eq
    z_max = lim.z_max if lim.z_max is not None else math.inf
    return z_max - abs(lim.a_z * d), lim.theta_max - abs(lim.a_theta * d)


def lookahead_bound(limit, pos, vel, beta, dt):
    """Acceleration that reaches ``limit`` from (pos, vel) in exactly beta*dt."""
    if beta < 1 or dt <= 0:
        raise ValueError("need beta >= 1 and dt > 0")
    return 2.0 * (limit - pos - vel * beta * dt) / (beta * dt) ** 2


def dcm_constraint_rows(
    state: ExoState,
    com: ComKinematics,
    lim: BalanceLimits,
    h: float,
    beta: float,
    dt: float,
    *,
    g: float = GRAVITY,
    com_accel=None,
):
    """Two rows bounding the CoM-Jacobian image of qddot so the DCM stays in its box.

    The DCM rate is ``v_com + T * a_com``; ``com_accel`` (previous tick's CoM
    acceleration) supplies ``a_com`` and is taken as zero when omitted.
    """
    T = time_constant(h, g)
    p = com.p_com + T * com.v_com
    a = np.zeros(2) if com_accel is None else np.asarray(com_accel, dtype=float)
    pdot = com.v_com + T * a
    z_upper, _ = variable_limits(com.p_com[0], lim)
    z_lower = lim.z_min if lim.z_min is not None else -math.inf
    p_hi = np.array([lim.x_forward, z_upper])
    p_lo = np.array([lim.x_backward, z_lower])
    upper = lookahead_bound(p_hi, p, pdot, beta, dt) - com.Jdot_qdot
    lower = lookahead_bound(p_lo, p, pdot, beta, dt) - com.Jdot_qdot
    D = np.hstack([com.J_com, np.zeros((2, NU))])
    return D, lower, upper


def backpack_limit_row(state: ExoState, com: ComKinematics, lim: BalanceLimits, params: ModelParams, beta, dt):
    """Upper lookahead on the backpack angle using the tent-shaped limit.

    One-sided: the lower side is already covered by the joint-limit rows.
    """
    _, theta_hi = variable_limits(com.p_com[0], lim)
    theta_hi = min(theta_hi, params.q_max[0])
    D = np.zeros((1, NQ + NU))
    D[0, 0] = 1.0
    upper = lookahead_bound(theta_hi, state.q[0], state.qdot[0], beta, dt)
    return D, np.array([-np.inf]), np.array([upper])
