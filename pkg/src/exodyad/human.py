"""Surrogate wearer: posture from a CoM-height target and an impedance torque law.

Nothing here models a real person. The surrogate is a tunable stand-in whose
skill is set by its stiffness, damping, reaction delay and torque noise.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import NQ, ExoState, ModelParams, forward_kinematics, gravity_vector, wearer_gravity_scale

# feedback gains on the unactuated backpack row when only joint gains are given
BACKPACK_KP = 100.0
BACKPACK_KD = 140.0


@dataclass(frozen=True)
class SkillParams:
    """``kp``/``kd`` may be scalars (actuated joints), 4-vectors or full 5-vectors."""

    kp: float | tuple = 60.0
    kd: float | tuple = 10.0
    reaction_delay: float = 0.05
    noise_std: float = 1.0
    noise_cutoff: float = 2.0
    seed: int = 0
    strength: float = 60.0
    backpack_kp: float = BACKPACK_KP
    backpack_kd: float = BACKPACK_KD
    target_rate: float = 0.3  # m/s; how fast the wearer moves the CoM-height goal

    def __post_init__(self):
        if np.any(self.kp_vec < 0) or np.any(self.kd_vec < 0):
            raise ValueError("kp and kd must be >= 0")
        if self.reaction_delay < 0 or self.noise_std < 0:
            raise ValueError("delay and noise_std must be >= 0")
        if self.strength <= 0 or self.noise_cutoff <= 0 or self.target_rate <= 0:
            raise ValueError("strength, noise_cutoff and target_rate must be > 0")

    def _vec(self, v, first):
        a = np.atleast_1d(np.asarray(v, dtype=float))
        if a.size == 1:
            a = np.repeat(a, NQ - 1)
        if a.size == NQ - 1:
            a = np.concatenate([[first], a])
        if a.size != NQ:
            raise ValueError("gain vectors need 1, 4 or 5 entries")
        return a

    @property
    def kp_vec(self) -> np.ndarray:
        return self._vec(self.kp, self.backpack_kp)

    @property
    def kd_vec(self) -> np.ndarray:
        return self._vec(self.kd, self.backpack_kd)


HIGH_SKILL = SkillParams(kp=60.0, kd=10.0, reaction_delay=0.05)
LOW_SKILL = SkillParams(kp=20.0, kd=6.0, reaction_delay=0.25)


# -- inverse kinematics -------------------------------------------------------


def _posture(knee: float, hip: float) -> np.ndarray:
    return np.array([0.0, hip, -knee, hip, -knee])


def _com(q, params):
    return forward_kinematics(q, params)["com"]


def _hip_for_balance(knee, params, x_eq, tol=1e-13):
    """Hip flexion that puts the CoM x-coordinate at x_eq for a given knee flexion."""
    lo, hi = -1.0, 2.5
    f_lo = _com(_posture(knee, lo), params)[0] - x_eq
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = _com(_posture(knee, mid), params)[0] - x_eq
        if (f > 0) == (f_lo > 0):
            lo, f_lo = mid, f
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _height(knee, params, x_eq):
    return _com(_posture(knee, _hip_for_balance(knee, params, x_eq)), params)[1]


def reachable_heights(params: ModelParams, x_eq: float = 0.0) -> tuple[float, float]:
    knee_max = -params.q_min[4]
    return _height(knee_max, params, x_eq), _height(0.0, params, x_eq)


def sts_inverse_kinematics(z_des: float, params: ModelParams, x_eq: float = 0.0, tol: float = 1e-9):
    """Symmetric, trunk-vertical posture whose CoM height is ``z_des``.

    Bisection on knee flexion; for each knee value the hip is solved so the
    CoM stays above x_eq. Returns ``(q_des, clamped)``.
    """
    knee_max = min(-params.q_min[4], -params.q_min[2])
    z_lo, z_hi = _height(knee_max, params, x_eq), _height(0.0, params, x_eq)
    clamped = False
    if z_des >= z_hi:
        return _posture(0.0, _hip_for_balance(0.0, params, x_eq)), z_des > z_hi + tol
    if z_des <= z_lo:
        z_des, clamped = z_lo, True
    lo, hi = 0.0, knee_max  # height falls as the knee flexes
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _height(mid, params, x_eq) > z_des:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    k = 0.5 * (lo + hi)
    return _posture(k, _hip_for_balance(k, params, x_eq)), clamped


@lru_cache(maxsize=16)
def _ik_table(params: ModelParams, x_eq: float, n: int = 801):
    knee_max = min(-params.q_min[4], -params.q_min[2])
    knees = np.linspace(0.0, knee_max, n)
    hips = np.array([_hip_for_balance(k, params, x_eq, tol=1e-12) for k in knees])
    z = np.array([_com(_posture(k, h), params)[1] for k, h in zip(knees, hips)])
    order = np.argsort(z)
    return z[order], knees[order], hips[order]


class PostureTable:
    """Interpolated inverse kinematics for fast per-tick use (error well below 1e-4 rad)."""

    def __init__(self, params: ModelParams, x_eq: float = 0.0):
        self.z, self.knee, self.hip = _ik_table(params, float(x_eq))

    def __call__(self, z_des: float) -> np.ndarray:
        k = float(np.interp(z_des, self.z, self.knee))
        h = float(np.interp(z_des, self.z, self.hip))
        return _posture(k, h)


# -- torque law ---------------------------------------------------------------


class Surrogate:
    """One wearer. Owns its delay buffer and random stream.

    The gravity share is the part of the gravity torques the wearer carries
    (see ``wearer_gravity_scale``).
    """

    def __init__(self, params: ModelParams, skill: SkillParams, dt: float, x_eq: float = 0.0):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.params = params
        self.skill = skill
        self.dt = dt
        self.kp = skill.kp_vec
        self.kd = skill.kd_vec
        self.delay_ticks = int(round(skill.reaction_delay / dt))
        self.table = PostureTable(params, x_eq)
        self.rng = np.random.default_rng(skill.seed)
        self.a = math.exp(-2 * math.pi * skill.noise_cutoff * dt)
        self.noise = np.zeros(NQ)
        self.buffer: deque = deque(maxlen=self.delay_ticks + 2)
        self.gravity_share = np.zeros(NQ)
        self.gravity_scale = wearer_gravity_scale(params)
        self.z_goal: float | None = None

    def reset(self):
        self.rng = np.random.default_rng(self.skill.seed)
        self.noise = np.zeros(NQ)
        self.buffer.clear()
        self.z_goal = None

    def follow(self, z_des: float) -> float:
        """Rate-limited CoM-height goal; steps in the target become ramps."""
        if self.z_goal is None:
            self.z_goal = float(z_des)
        else:
            step = self.skill.target_rate * self.dt
            self.z_goal += min(max(z_des - self.z_goal, -step), step)
        return self.z_goal

    def posture(self, z_des: float) -> np.ndarray:
        return self.table(z_des)

    def _step_noise(self):
        if self.skill.noise_std == 0:
            return self.noise
        w = self.rng.standard_normal(NQ)
        # first-order low-pass keeping the stationary std at noise_std
        self.noise = self.a * self.noise + math.sqrt(1 - self.a * self.a) * self.skill.noise_std * w
        return self.noise

    def delayed(self, q_des):
        """Push this tick's displayed posture; return the delayed one and its rate."""
        self.buffer.append(np.asarray(q_des, dtype=float))
        idx = max(len(self.buffer) - 1 - self.delay_ticks, 0)
        cur = self.buffer[idx]
        prev = self.buffer[idx - 1] if idx > 0 else cur
        return cur, (cur - prev) / self.dt

    def human_torque(self, state: ExoState, q_des, t: float = 0.0, support: float = 1.0, g_vec=None) -> np.ndarray:
        """Impedance law on the delayed target plus the gravity share and noise.

        ``support`` scales the gravity share (below 1 while resting on the chair).
        ``g_vec`` may carry a precomputed g(q, 0).
        """
        qd, qd_dot = self.delayed(q_des)
        g0 = gravity_vector(state.q, self.params) if g_vec is None else g_vec
        self.gravity_share = support * self.gravity_scale * g0
        tau = self.kp * (qd - state.q) + self.kd * (qd_dot - state.qdot) + self.gravity_share
        tau = tau + self._step_noise()
        return np.clip(tau, -self.skill.strength, self.skill.strength)


def human_torque(surrogate: Surrogate, state: ExoState, q_des, t: float = 0.0) -> np.ndarray:
    return surrogate.human_torque(state, q_des, t)
