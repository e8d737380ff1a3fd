"""Rendered interaction between two exoskeletons and the virtual-mass law."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import NQ, NU, ComKinematics, ExoState


class Mode(str, Enum):
    TRANSPARENT = "transparent"
    JOINT_SPACE = "joint_space"
    TASK_SPACE = "task_space"


# default stiff and soft coupling gains
SOFT_K, SOFT_C = 30.0, 4.0
STIFF_K, STIFF_C = 70.0, 10.0
TASK_K, TASK_C = 1000.0, 50.0


@dataclass(frozen=True)
class CouplingGains:
    """Spring/damper constants; joint-space gains are diagonal (one value per actuated joint)."""

    K_q: tuple[float, ...] = (STIFF_K,) * NU
    C_q: tuple[float, ...] = (STIFF_C,) * NU
    K_z: float = TASK_K
    C_z: float = TASK_C
    mode: Mode = Mode.JOINT_SPACE

    def __post_init__(self):
        kq = _diag4(self.K_q)
        cq = _diag4(self.C_q)
        object.__setattr__(self, "K_q", kq)
        object.__setattr__(self, "C_q", cq)
        object.__setattr__(self, "mode", Mode(self.mode))
        if min(kq) < 0 or min(cq) < 0 or self.K_z < 0 or self.C_z < 0:
            raise ValueError("coupling gains must be non-negative")

    @classmethod
    def soft(cls, mode=Mode.JOINT_SPACE):
        return cls(K_q=(SOFT_K,) * NU, C_q=(SOFT_C,) * NU, mode=mode)

    @classmethod
    def stiff(cls, mode=Mode.JOINT_SPACE):
        return cls(K_q=(STIFF_K,) * NU, C_q=(STIFF_C,) * NU, mode=mode)

    def with_mode(self, mode):
        return CouplingGains(self.K_q, self.C_q, self.K_z, self.C_z, Mode(mode))


def _diag4(v):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim == 2:
        arr = np.diag(arr)
    if arr.size == 1:
        arr = np.repeat(arr, NU)
    if arr.size != NU:
        raise ValueError("joint-space gains need 4 diagonal entries")
    return tuple(float(a) for a in arr)


@dataclass(frozen=True)
class VirtualMass:
    M_virt: np.ndarray = field(default_factory=lambda: np.eye(NQ))

    def __post_init__(self):
        Mv = np.asarray(self.M_virt, dtype=float)
        if Mv.ndim == 1:
            Mv = np.diag(Mv)
        if Mv.shape != (NQ, NQ):
            raise ValueError("virtual mass must be 5x5")
        if not np.allclose(Mv, Mv.T) or np.linalg.eigvalsh(Mv).min() <= 0:
            raise ValueError("virtual mass must be symmetric positive definite")
        object.__setattr__(self, "M_virt", Mv)

    @classmethod
    def diagonal(cls, values):
        return cls(np.diag(np.broadcast_to(np.asarray(values, dtype=float), (NQ,))))


def coupling_force(z_a, zdot_a, z_b, zdot_b, gains: CouplingGains) -> float:
    """Vertical spring-damper force on A; B receives the negative."""
    return gains.K_z * (z_b - z_a) + gains.C_z * (zdot_b - zdot_a)


def desired_interaction(
    state_a: ExoState,
    state_b: ExoState,
    com_a: ComKinematics,
    com_b: ComKinematics,
    gains: CouplingGains,
) -> tuple[np.ndarray, np.ndarray]:
    """Coupling torques rendered on A and on B.

    Joint space acts on the four actuated rows only (the backpack row stays 0).
    Task space couples the vertical CoM positions and maps the force pair
    through each side's vertical CoM Jacobian.
    """
    tau_a = np.zeros(NQ)
    tau_b = np.zeros(NQ)
    if gains.mode is Mode.TRANSPARENT:
        return tau_a, tau_b
    if gains.mode is Mode.JOINT_SPACE:
        K = np.asarray(gains.K_q)
        C = np.asarray(gains.C_q)
        tau_a[1:] = K * (state_b.q[1:] - state_a.q[1:]) + C * (state_b.qdot[1:] - state_a.qdot[1:])
        tau_b[1:] = K * (state_a.q[1:] - state_b.q[1:]) + C * (state_a.qdot[1:] - state_b.qdot[1:])
        return tau_a, tau_b
    f_a = coupling_force(com_a.p_com[1], com_a.v_com[1], com_b.p_com[1], com_b.v_com[1], gains)
    f_b = coupling_force(com_b.p_com[1], com_b.v_com[1], com_a.p_com[1], com_a.v_com[1], gains)
    return com_a.Jz * f_a, com_b.Jz * f_b


def virtual_mass_accel(tau_int, tau_int_des, m: VirtualMass) -> np.ndarray:
    """Desired generalized acceleration M_virt^-1 (tau_int - tau_int_des)."""
    diff = np.asarray(tau_int, dtype=float) - np.asarray(tau_int_des, dtype=float)
    return np.linalg.solve(m.M_virt, diff)
