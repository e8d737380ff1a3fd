"""Per-tick whole-body QP controller over x = (qddot, tau_motor)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import balance
from .interaction import CouplingGains, Mode, VirtualMass, desired_interaction, virtual_mass_accel
from .model import (
    NQ,
    NU,
    SELECTION,
    ComKinematics,
    DynamicsTerms,
    ExoState,
    ModelParams,
    com_kinematics,
    dynamics_terms,
    friction_torque,
    wearer_gravity_scale,
)
from .qp import INF, AdmmSolver, QpProblem, QpSolution, Settings

log = logging.getLogger(__name__)

TAU_REG = 1e-8


@dataclass
class ControllerConfig:
    beta: float = 20.0
    dt: float = 0.002
    tau_max: float | tuple = 80.0
    qdot_max: float = 3.0
    enable_balance: bool = True
    # the lookahead bound admits a small overshoot, so the rows aim slightly inside the box
    limit_margin: float = 0.01
    virtual_mass: VirtualMass = field(default_factory=VirtualMass)
    gains: CouplingGains = field(default_factory=CouplingGains)
    limits: balance.BalanceLimits = field(default_factory=balance.BalanceLimits)
    hold_window: float = 0.04
    failure_decay: float = 0.9
    qp: Settings = field(default_factory=Settings)

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if np.any(np.asarray(self.tau_max) <= 0) or self.qdot_max <= 0:
            raise ValueError("tau_max and qdot_max must be > 0")
        if self.hold_window < 0 or self.limit_margin < 0:
            raise ValueError("hold_window and limit_margin must be >= 0")

    @property
    def tau_box(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.tau_max, dtype=float), (NU,)).copy()


@dataclass
class ControlOutput:
    tau_motor: np.ndarray
    qddot_opt: np.ndarray
    qp_status: str
    active_constraints: frozenset
    qddot_des: np.ndarray = None
    tau_coupling: np.ndarray = None
    coupling_force: float = 0.0
    iterations: int = 0
    eom_residual: float = 0.0
    mode: Mode = Mode.TRANSPARENT
    stale: bool = False
    qp_failed: bool = False
    relaxed: bool = False
    com: ComKinematics = None


# -- constraint blocks --------------------------------------------------------


def joint_limit_rows(state: ExoState, params: ModelParams, beta, dt, margin: float = 0.0):
    """Lookahead rows keeping every coordinate inside [q_min, q_max] for beta*dt."""
    lo = np.asarray(params.q_min) + margin
    hi = np.asarray(params.q_max) - margin
    D = np.hstack([np.eye(NQ), np.zeros((NQ, NU))])
    upper = balance.lookahead_bound(hi, state.q, state.qdot, beta, dt)
    lower = balance.lookahead_bound(lo, state.q, state.qdot, beta, dt)
    return D, lower, upper


def torque_rows(tau_max):
    D = np.hstack([np.zeros((NU, NQ)), np.eye(NU)])
    t = np.broadcast_to(np.asarray(tau_max, dtype=float), (NU,))
    return D, -t, t.copy()


def velocity_rows(state: ExoState, qdot_max, beta, dt):
    """|qdot + qddot*beta*dt| <= qdot_max."""
    T = beta * dt
    D = np.hstack([np.eye(NQ), np.zeros((NQ, NU))])
    return D, (-qdot_max - state.qdot) / T, (qdot_max - state.qdot) / T


_P = np.zeros((NQ + NU, NQ + NU))
_P[:NQ, :NQ] = 2.0 * np.eye(NQ)
_P[NQ:, NQ:] = TAU_REG * np.eye(NU)
_BASE_LABELS = (
    tuple(f"eom{i}" for i in range(NQ))
    + tuple(f"qlim{i}" for i in range(NQ))
    + tuple(f"tau{i + 1}" for i in range(NU))
    + tuple(f"vel{i}" for i in range(NQ))
)
_BALANCE_LABELS = ("dcm_x", "dcm_z", "backpack")


def build_qp(
    state: ExoState,
    dyn: DynamicsTerms,
    com: ComKinematics,
    qddot_des,
    tau_int,
    tau_friction,
    cfg: ControllerConfig,
    params: ModelParams | None = None,
    com_accel=None,
    balance_rows: bool | None = None,
) -> QpProblem:
    """Stack objective, EOM equality, joint/torque/velocity boxes and balance rows.

    Two-sided rows carry both bounds, so each box contributes one row per
    coordinate (lower and upper side).
    """
    params = params or ModelParams()
    c = np.zeros(NQ + NU)
    c[:NQ] = -2.0 * np.asarray(qddot_des, dtype=float)

    use_balance = cfg.enable_balance if balance_rows is None else balance_rows
    m = 3 * NQ + NU + (3 if use_balance else 0)
    A = np.zeros((m, NQ + NU))
    lo = np.empty(m)
    hi = np.empty(m)

    A[:NQ, :NQ] = dyn.M
    A[:NQ, NQ:] = -SELECTION.T
    b_eom = -dyn.b - dyn.g_vec + np.asarray(tau_int, dtype=float)
    b_eom[1:] += tau_friction
    lo[:NQ] = b_eom
    hi[:NQ] = b_eom

    r = NQ
    _, lo[r : r + NQ], hi[r : r + NQ] = joint_limit_rows(state, params, cfg.beta, cfg.dt, cfg.limit_margin)
    A[r : r + NQ, :NQ] = np.eye(NQ)
    r += NQ
    tmax = cfg.tau_box
    A[r : r + NU, NQ:] = np.eye(NU)
    lo[r : r + NU] = -tmax
    hi[r : r + NU] = tmax
    r += NU
    _, lo[r : r + NQ], hi[r : r + NQ] = velocity_rows(state, cfg.qdot_max, cfg.beta, cfg.dt)
    A[r : r + NQ, :NQ] = np.eye(NQ)
    r += NQ
    labels = _BASE_LABELS

    if use_balance:
        lim = cfg.limits.resolve(params) if cfg.limits.z_max is None or cfg.limits.z_min is None else cfg.limits
        D, dlo, dhi = balance.dcm_constraint_rows(state, com, lim, params.h, cfg.beta, cfg.dt, g=params.g, com_accel=com_accel)
        A[r : r + 2] = D
        lo[r : r + 2] = dlo
        hi[r : r + 2] = dhi
        r += 2
        D, blo, bhi = balance.backpack_limit_row(state, com, lim, params, cfg.beta, cfg.dt)
        A[r] = D[0]
        lo[r] = blo[0]
        hi[r] = bhi[0]
        labels = _BASE_LABELS + _BALANCE_LABELS

    lo = np.where(np.isfinite(lo), lo, -INF)
    hi = np.where(np.isfinite(hi), hi, INF)
    return QpProblem.trusted(_P.copy(), c, A, lo, hi, labels)


def eom_residual(x, dyn: DynamicsTerms, tau_int, tau_friction) -> float:
    qdd, tau = x[:NQ], x[NQ:]
    r = dyn.M @ qdd + dyn.b + dyn.g_vec - SELECTION.T @ (tau + tau_friction) - tau_int
    return float(np.abs(r).max())


# -- controller ---------------------------------------------------------------


@dataclass(frozen=True)
class PeerSnapshot:
    """What one controller knows about the other exoskeleton."""

    q: np.ndarray
    qdot: np.ndarray
    z_com: float
    zdot_com: float
    time: float
    seq: int = 0


class Controller:
    """One exoskeleton's controller; holds only its own warm start and history.

    The QP model uses the physical gravity g(q, 0). Assistance enters through
    the acceleration target: on the actuated rows the wearer is expected to
    carry g(q, alpha) and the motors make up alpha*g*Jz. The backpack row is
    out of the motors' reach and stays with the wearer.
    """

    def __init__(self, params: ModelParams, cfg: ControllerConfig | None = None):
        self.params = params
        self.cfg = cfg or ControllerConfig()
        self.solver = AdmmSolver(self.cfg.qp)
        self.relaxed_solver = AdmmSolver(self.cfg.qp)
        self.prev_tau = np.zeros(NU)
        self.prev_vcom: np.ndarray | None = None
        self.failures = 0
        self.last_problem: QpProblem | None = None
        self.last_solution: QpSolution | None = None
        self.gravity_scale = wearer_gravity_scale(params)
        if self.cfg.enable_balance:
            self.limits = self.cfg.limits.resolve(params)
        else:
            self.limits = self.cfg.limits

    def reset(self):
        self.solver.reset()
        self.relaxed_solver.reset()
        self.prev_tau = np.zeros(NU)
        self.prev_vcom = None
        self.failures = 0

    def coupling(self, state: ExoState, com: ComKinematics, peer: PeerSnapshot | None, mode: Mode, now: float):
        """Coupling torque on this side, the force (task space) and the effective mode."""
        mode = Mode(mode)
        stale = False
        if mode is not Mode.TRANSPARENT:
            if peer is None or now - peer.time > self.cfg.hold_window + 1e-9:
                stale = True
                mode = Mode.TRANSPARENT
        if mode is Mode.TRANSPARENT:
            return np.zeros(NQ), 0.0, mode, stale
        gains = self.cfg.gains.with_mode(mode)
        other = ExoState(peer.q, peer.qdot, peer.time)
        other_com = ComKinematics(
            p_com=np.array([0.0, peer.z_com]),
            v_com=np.array([0.0, peer.zdot_com]),
            J_com=np.zeros((2, NQ)),
            Jdot_qdot=np.zeros(2),
        )
        tau_a, _ = desired_interaction(state, other, com, other_com, gains)
        force = 0.0
        if mode is Mode.TASK_SPACE:
            force = gains.K_z * (peer.z_com - com.p_com[1]) + gains.C_z * (peer.zdot_com - com.v_com[1])
        return tau_a, force, mode, stale

    def step(
        self,
        state: ExoState,
        tau_int,
        peer: PeerSnapshot | None = None,
        mode: Mode = Mode.TRANSPARENT,
        now: float | None = None,
        dyn: DynamicsTerms | None = None,
        com: ComKinematics | None = None,
    ) -> ControlOutput:
        p = self.params
        cfg = self.cfg
        now = state.time if now is None else now
        tau_int = np.asarray(tau_int, dtype=float)
        if dyn is None:
            dyn = dynamics_terms(state.q, state.qdot, 0.0, p)
        if com is None:
            com = com_kinematics(state.q, state.qdot, p)
        tau_f = friction_torque(state.qdot[1:], p)

        tau_c, force, eff_mode, stale = self.coupling(state, com, peer, mode, now)
        g_rendered = dyn.g_vec * self.gravity_scale
        qdd_des = virtual_mass_accel(tau_int, g_rendered - tau_c, cfg.virtual_mass)

        com_accel = None
        if self.prev_vcom is not None:
            com_accel = (com.v_com - self.prev_vcom) / cfg.dt
        self.prev_vcom = com.v_com.copy()

        prob = build_qp(state, dyn, com, qdd_des, tau_int, tau_f, cfg, p, com_accel)
        sol = self.solver.solve(prob)
        relaxed = False
        if not sol.solved and cfg.enable_balance:
            # balance rows can conflict with the torque box after a hard push;
            # keep the safety boxes and drop the balance block for this tick
            prob = build_qp(state, dyn, com, qdd_des, tau_int, tau_f, cfg, p, com_accel, balance_rows=False)
            sol = self.relaxed_solver.solve(prob)
            relaxed = sol.solved
        self.last_problem, self.last_solution = prob, sol

        if sol.solved:
            self.failures = 0
            tau = sol.x[NQ:].copy()
            qdd = sol.x[:NQ].copy()
            resid = eom_residual(sol.x, dyn, tau_int, tau_f)
            active = frozenset(prob.labels[i] for i in sol.active(prob) if not prob.labels[i].startswith("eom"))
            failed = False
        else:
            self.failures += 1
            log.debug("QP %s at t=%.3f (%d in a row)", sol.status, now, self.failures)
            tau = cfg.failure_decay * self.prev_tau
            qdd = np.full(NQ, np.nan)
            resid = np.nan
            active = frozenset()
            failed = True
            self.solver.reset()
        self.relaxed_solver.reset()
        self.prev_tau = tau
        return ControlOutput(
            tau_motor=tau,
            qddot_opt=qdd,
            qp_status=sol.status,
            active_constraints=active,
            qddot_des=qdd_des,
            tau_coupling=tau_c,
            coupling_force=force,
            iterations=sol.iterations,
            eom_residual=resid,
            mode=eff_mode,
            stale=stale,
            qp_failed=failed,
            relaxed=relaxed,
            com=com,
        )


def control_step(controller: Controller, state: ExoState, tau_int, peer, mode, now=None) -> ControlOutput:
    """Functional wrapper around :meth:`Controller.step`."""
    return controller.step(state, tau_int, peer, mode, now)
