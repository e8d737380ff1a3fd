"""Sagittal-plane kinematics and dynamics of one wearer + exoskeleton in double stance.

Generalized coordinates ``q`` (rad), in order::

    q[0]  backpack (trunk) absolute angle from vertical, unactuated
    q[1]  left hip   (flexion positive)
    q[2]  left knee  (flexion negative)
    q[3]  right hip
    q[4]  right knee

The right foot is the stance anchor at the origin. The right shank, right thigh
and trunk form the chain to the backpack; the left leg hangs from the pelvis as
a branch whose foot is not constrained. Segment absolute angles are linear in
``q`` (see ``SEGMENT_MAP``), which keeps every Jacobian and Christoffel symbol
in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NQ = 5
NU = 4
GRAVITY = 9.81

# absolute segment angle = SEGMENT_MAP @ q; rows: R shank, R thigh, trunk, L thigh, L shank
SEGMENT_MAP = np.array(
    [
        [1.0, 0.0, 0.0, -1.0, -1.0],
        [1.0, 0.0, 0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [1.0, -1.0, -1.0, 0.0, 0.0],
    ]
)
SEGMENT_NAMES = ("shank_r", "thigh_r", "trunk", "thigh_l", "shank_l")

# selection of actuated coordinates, S = [0_{4x1}, I_4]
SELECTION = np.hstack([np.zeros((NU, 1)), np.eye(NU)])


class InvalidStateError(ValueError):
    """Raised for non-finite coordinates or velocities."""


def _deg(*vals):
    return tuple(math.radians(v) for v in vals)


@dataclass(frozen=True)
class ModelParams:
    """Anthropometric and actuator parameters of one human-exoskeleton system.

    Masses are per segment (each leg carries one shank and one thigh).
    ``com_*`` are fractions of the segment length measured from the lower
    joint (ankle, knee, hip). Inertias default to uniform rods about the
    segment CoM when left as ``None``.
    """

    shank_length: float = 0.45
    thigh_length: float = 0.45
    trunk_length: float = 0.60
    m_shank: float = 4.0
    m_thigh: float = 8.0
    m_trunk: float = 40.0
    com_shank: float = 0.5
    com_thigh: float = 0.5
    com_trunk: float = 0.5
    inertia_shank: float | None = None
    inertia_thigh: float | None = None
    inertia_trunk: float | None = None
    g: float = GRAVITY
    alpha: float = 0.0
    pendulum_height: float | None = None
    q_min: tuple[float, ...] = _deg(-30.0, -40.0, -120.0, -40.0, -120.0)
    q_max: tuple[float, ...] = _deg(45.0, 120.0, 0.0, 120.0, 0.0)
    viscous: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2)
    coulomb: tuple[float, ...] = (0.5, 0.5, 0.5, 0.5)
    friction_smoothing: float = 0.01

    def __post_init__(self):
        for name in ("shank_length", "thigh_length", "trunk_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        # zero masses are tolerated for kinematic checks; dynamics needs validate()
        for name in ("m_shank", "m_thigh", "m_trunk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.total_mass <= 0:
            raise ValueError("total mass must be > 0")
        if len(self.q_min) != NQ or len(self.q_max) != NQ:
            raise ValueError("joint limits need 5 entries")
        if len(self.viscous) != NU or len(self.coulomb) != NU:
            raise ValueError("friction coefficients need 4 entries")
        object.__setattr__(self, "q_min", tuple(float(v) for v in self.q_min))
        object.__setattr__(self, "q_max", tuple(float(v) for v in self.q_max))
        object.__setattr__(self, "viscous", tuple(float(v) for v in self.viscous))
        object.__setattr__(self, "coulomb", tuple(float(v) for v in self.coulomb))
        if any(lo >= hi for lo, hi in zip(self.q_min, self.q_max)):
            raise ValueError("q_min must be < q_max elementwise")
        if not 0 <= self.alpha < self.total_mass:
            raise ValueError("alpha must satisfy 0 <= alpha < total mass")
        if self.pendulum_height is not None and not self.pendulum_height > 0:
            raise ValueError("pendulum_height must be > 0")
        if min(self.viscous) < 0 or min(self.coulomb) < 0 or self.friction_smoothing <= 0:
            raise ValueError("friction coefficients must be >= 0 and smoothing > 0")

    def validate(self):
        """Strict checks required before the model is used for dynamics."""
        for name in ("m_shank", "m_thigh", "m_trunk"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        return self

    @property
    def total_mass(self) -> float:
        return 2 * self.m_shank + 2 * self.m_thigh + self.m_trunk

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.q_min)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.q_max)

    @cached_property
    def h(self) -> float:
        """Linear-inverted-pendulum height: CoM height at the upright posture."""
        if self.pendulum_height is not None:
            return self.pendulum_height
        return float(forward_kinematics(np.zeros(NQ), self)["com"][1])

    @cached_property
    def _tables(self):
        ls, lt, ltr = self.shank_length, self.thigh_length, self.trunk_length
        cs, ct, ctr = self.com_shank, self.com_thigh, self.com_trunk
        # CoM of body i = sum_j coeff[i, j] * (sin phi_j, cos phi_j)
        coeff = np.array(
            [
                [cs * ls, 0.0, 0.0, 0.0, 0.0],
                [ls, ct * lt, 0.0, 0.0, 0.0],
                [ls, lt, ctr * ltr, 0.0, 0.0],
                [ls, lt, 0.0, -(1.0 - ct) * lt, 0.0],
                [ls, lt, 0.0, -lt, -(1.0 - cs) * ls],
            ]
        )
        mass = np.array([self.m_shank, self.m_thigh, self.m_trunk, self.m_thigh, self.m_shank])

        def rod(i, m, length):
            return m * length**2 / 12.0 if i is None else i

        inertia = np.array(
            [
                rod(self.inertia_shank, self.m_shank, ls),
                rod(self.inertia_thigh, self.m_thigh, lt),
                rod(self.inertia_trunk, self.m_trunk, ltr),
                rod(self.inertia_thigh, self.m_thigh, lt),
                rod(self.inertia_shank, self.m_shank, ls),
            ]
        )
        # mass-weighted coefficients give the total CoM directly
        com_coeff = mass @ coeff / self.total_mass
        rot = (SEGMENT_MAP.T * inertia) @ SEGMENT_MAP
        return coeff, mass, inertia, com_coeff, rot


@dataclass(frozen=True)
class ExoState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(NQ))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(NQ))


@dataclass(frozen=True)
class DynamicsTerms:
    M: np.ndarray
    b: np.ndarray
    g_vec: np.ndarray


@dataclass(frozen=True)
class ComKinematics:
    p_com: np.ndarray
    v_com: np.ndarray
    J_com: np.ndarray
    Jdot_qdot: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def Jz(self) -> np.ndarray:
        return self.J_com[1]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidStateError("non-finite state value")


def segment_angles(q) -> np.ndarray:
    return SEGMENT_MAP @ np.asarray(q, dtype=float)


def forward_kinematics(q, params: ModelParams) -> dict[str, np.ndarray]:
    """Joint positions, segment CoMs and the total CoM, all as (x, z) in metres."""
    q = np.asarray(q, dtype=float)
    _check_finite(q)
    phi = segment_angles(q)
    u = np.column_stack([np.sin(phi), np.cos(phi)])
    ls, lt, ltr = params.shank_length, params.thigh_length, params.trunk_length
    knee_r = ls * u[0]
    hip = knee_r + lt * u[1]
    knee_l = hip - lt * u[3]
    coeff, _, _, com_coeff, _ = params._tables
    return {
        "ankle_r": np.zeros(2),
        "knee_r": knee_r,
        "hip": hip,
        "head": hip + ltr * u[2],
        "knee_l": knee_l,
        "ankle_l": knee_l - ls * u[4],
        "segment_com": coeff @ u,
        "com": com_coeff @ u,
    }


def point_jacobian(q, coeff_row) -> np.ndarray:
    """2x5 Jacobian of the point sum_j coeff_row[j] * u(phi_j)."""
    phi = segment_angles(q)
    cr = np.asarray(coeff_row, dtype=float)
    return np.vstack([(cr * np.cos(phi)) @ SEGMENT_MAP, (-cr * np.sin(phi)) @ SEGMENT_MAP])


def hip_coeff(params: ModelParams) -> np.ndarray:
    return np.array([params.shank_length, params.thigh_length, 0.0, 0.0, 0.0])


def com_kinematics(q, qdot, params: ModelParams) -> ComKinematics:
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    _check_finite(q, qdot)
    phi = SEGMENT_MAP @ q
    omega = SEGMENT_MAP @ qdot
    s, c = np.sin(phi), np.cos(phi)
    cc = params._tables[3]
    p = np.array([cc @ s, cc @ c])
    J = np.vstack([(cc * c) @ SEGMENT_MAP, (-cc * s) @ SEGMENT_MAP])
    w2 = omega * omega
    jdqd = np.array([-(cc * s) @ w2, -(cc * c) @ w2])
    return ComKinematics(p_com=p, v_com=J @ qdot, J_com=J, Jdot_qdot=jdqd)


def _body_jacobians(q, params):
    """Per-body CoM Jacobians (x and z rows) and their q-derivatives."""
    coeff = params._tables[0]
    phi = SEGMENT_MAP @ q
    s, c = np.sin(phi), np.cos(phi)
    Jx = (coeff * c) @ SEGMENT_MAP
    Jz = (-coeff * s) @ SEGMENT_MAP
    # dJ[i, :, l] / dq_k = sum_j coeff_ij * d(u'_j)/dphi * Phi_jk * Phi_jl
    dJx = np.einsum("ij,jk,jl->ikl", -coeff * s, SEGMENT_MAP, SEGMENT_MAP)
    dJz = np.einsum("ij,jk,jl->ikl", -coeff * c, SEGMENT_MAP, SEGMENT_MAP)
    return Jx, Jz, dJx, dJz


def mass_matrix(q, params: ModelParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _, mass, _, _, rot = params._tables
    Jx, Jz, _, _ = _body_jacobians(q, params)
    M = np.einsum("i,ik,il->kl", mass, Jx, Jx) + np.einsum("i,ik,il->kl", mass, Jz, Jz) + rot
    return 0.5 * (M + M.T)


def mass_matrix_derivative(q, params: ModelParams) -> np.ndarray:
    """dM[k] = dM/dq_k, shape (5, 5, 5)."""
    q = np.asarray(q, dtype=float)
    mass = params._tables[1]
    Jx, Jz, dJx, dJz = _body_jacobians(q, params)
    t = np.einsum("i,ika,il->kal", mass, dJx, Jx) + np.einsum("i,ika,il->kal", mass, dJz, Jz)
    # t[k, a, l] = sum_i m_i dJ_i[a]/dq_k * J_i[l]; dM/dq_k = t + t^T
    return t + t.transpose(0, 2, 1)


def christoffel(q, params: ModelParams) -> np.ndarray:
    """Gamma[i, j, k] = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i)."""
    dM = mass_matrix_derivative(q, params)  # dM[k, i, j]
    return 0.5 * (dM.transpose(1, 2, 0) + dM.transpose(1, 0, 2) - dM)


def coriolis_matrix(q, qdot, params: ModelParams) -> np.ndarray:
    return christoffel(q, params) @ np.asarray(qdot, dtype=float)


def gravity_vector(q, params: ModelParams, alpha: float = 0.0) -> np.ndarray:
    """Gravity torques; ``alpha`` kg of upward support at the CoM is subtracted."""
    com = com_kinematics(q, np.zeros(NQ), params)
    return (params.total_mass - alpha) * params.g * com.J_com[1]


def potential_energy(q, params: ModelParams) -> float:
    return params.total_mass * params.g * float(forward_kinematics(q, params)["com"][1])


def kinetic_energy(q, qdot, params: ModelParams) -> float:
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * float(qdot @ mass_matrix(q, params) @ qdot)


def dynamics_terms(q, qdot, alpha: float, params: ModelParams) -> DynamicsTerms:
    return dynamics_and_com(q, qdot, alpha, params)[0]


def dynamics_and_com(q, qdot, alpha: float, params: ModelParams) -> tuple[DynamicsTerms, ComKinematics]:
    """Dynamics terms and CoM kinematics sharing one trigonometric evaluation.

    With segment angles linear in q, M = sum_i m_i J_i'J_i + const, so the
    velocity product is b = sum_i m_i J_i' (Jdot_i qdot). ``christoffel`` gives
    the same vector through the Coriolis matrix.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    _check_finite(q, qdot)
    coeff, mass, _, cc, rot = params._tables
    phi = SEGMENT_MAP @ q
    w2 = (SEGMENT_MAP @ qdot) ** 2
    s, c = np.sin(phi), np.cos(phi)
    Jx = (coeff * c) @ SEGMENT_MAP
    Jz = (-coeff * s) @ SEGMENT_MAP
    ax = (-coeff * s) @ w2
    az = (-coeff * c) @ w2
    mJx = mass[:, None] * Jx
    mJz = mass[:, None] * Jz
    M = mJx.T @ Jx + mJz.T @ Jz + rot
    M = 0.5 * (M + M.T)
    b = mJx.T @ ax + mJz.T @ az
    J = np.vstack([(cc * c) @ SEGMENT_MAP, (-cc * s) @ SEGMENT_MAP])
    gv = (params.total_mass - alpha) * params.g * J[1]
    if np.linalg.cond(M) > 1e8:
        warnings.warn("mass matrix is near singular", RuntimeWarning, stacklevel=3)
    com = ComKinematics(
        p_com=np.array([cc @ s, cc @ c]),
        v_com=J @ qdot,
        J_com=J,
        Jdot_qdot=np.array([-(cc * s) @ w2, -(cc * c) @ w2]),
    )
    return DynamicsTerms(M=M, b=b, g_vec=gv), com


def wearer_gravity_scale(params: ModelParams) -> np.ndarray:
    """Share of each gravity row left to the wearer under alpha kg of assistance.

    Joint motors cannot act on the unactuated backpack row, so that row keeps
    its full load; the actuated rows drop by alpha / total mass.
    """
    f = params.alpha / params.total_mass
    return np.array([1.0] + [1.0 - f] * NU)


def friction_torque(qdot_actuated, params: ModelParams) -> np.ndarray:
    """Viscous plus tanh-smoothed Coulomb friction on the four actuated joints."""
    v = np.asarray(qdot_actuated, dtype=float)
    _check_finite(v)
    visc = np.asarray(params.viscous)
    coul = np.asarray(params.coulomb)
    return -(visc * v + coul * np.tanh(v / params.friction_smoothing))
