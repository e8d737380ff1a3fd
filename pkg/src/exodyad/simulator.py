"""Fixed-step closed loop for two wearers, two exoskeletons and one link between them."""

from __future__ import annotations

import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .balance import time_constant
from .controller import Controller, ControllerConfig, PeerSnapshot
from .human import SkillParams, Surrogate
from .interaction import Mode
from .model import (
    NQ,
    NU,
    SEGMENT_MAP,
    SELECTION,
    DynamicsTerms,
    ExoState,
    ModelParams,
    dynamics_and_com,
    dynamics_terms,
    friction_torque,
    hip_coeff,
    point_jacobian,
)
from .qp import MAX_ITER, PRIMAL_INFEASIBLE, SOLVED
from .reference import (
    Phase,
    RangeOfMotion,
    ReferenceProfile,
    TrialSchedule,
    common_rom,
    period,
    target,
    trial_phase,
)
from .transport import Channel, ChannelModel, Loopback, StateMessage, encode, timestamp_us

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
USERS = ("A", "B")
STATUS_CODES = {SOLVED: 0, MAX_ITER: 1, PRIMAL_INFEASIBLE: 2}
STATUS_NAMES = {v: k for k, v in STATUS_CODES.items()}
PHASE_CODES = {Phase.SOLO: 0, Phase.REST: 1, Phase.COUPLED: 2, Phase.DONE: 3}
PHASE_NAMES = {v: k.value for k, v in PHASE_CODES.items()}
CSV_COLUMNS = (
    ["t", "phase", "trial", "user"]
    + [f"q{i}" for i in range(NQ)]
    + [f"qd{i}" for i in range(NQ)]
    + [f"tau_m{i + 1}" for i in range(NU)]
    + [f"tau_int{i}" for i in range(NQ)]
    + ["z_com", "z_target", "dcm_x", "dcm_z", "qp_iters", "qp_status"]
)


class SimulationAbort(RuntimeError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


# -- plant --------------------------------------------------------------------


def forward_accel(state: ExoState, tau_motor, tau_int, dyn: DynamicsTerms, params: ModelParams, tau_ext=None):
    tau_f = friction_torque(state.qdot[1:], params)
    rhs = SELECTION.T @ (np.asarray(tau_motor) + tau_f) + np.asarray(tau_int) - dyn.b - dyn.g_vec
    if tau_ext is not None:
        rhs = rhs + tau_ext
    return np.linalg.solve(dyn.M, rhs)


def integrate_step(state: ExoState, tau_motor, tau_int, dyn: DynamicsTerms, dt: float, params=None, tau_ext=None):
    """Semi-implicit Euler step. ``dyn`` must be evaluated at ``state`` with the physical gravity."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    params = params or ModelParams()
    qdd = forward_accel(state, tau_motor, tau_int, dyn, params, tau_ext)
    if not np.all(np.isfinite(qdd)):
        raise SimulationAbort(f"non-finite acceleration at t={state.time:.4f}")
    qdot = state.qdot + qdd * dt
    q = state.q + qdot * dt
    return ExoState(q, qdot, state.time + dt)


def rk4_step(state: ExoState, tau_motor, tau_int, dt: float, params: ModelParams, tau_ext=None):
    """Classical RK4 with torques held over the step (reference integrator)."""

    def f(q, v):
        s = ExoState(q, v, state.time)
        return v, forward_accel(s, tau_motor, tau_int, dynamics_terms(q, v, 0.0, params), params, tau_ext)

    q, v = state.q, state.qdot
    k1q, k1v = f(q, v)
    k2q, k2v = f(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, v + dt * k3v)
    q_new = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
    v_new = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return ExoState(q_new, v_new, state.time + dt)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class Push:
    user: str = "A"
    start: float = 1.0
    duration: float = 0.2
    force: float = 50.0  # forward, at the trunk CoM


@dataclass(frozen=True)
class Chair:
    stiffness: float = 20000.0
    damping: float = 800.0
    clearance: float = 0.005  # seat sits this far below the hip at the lowest posture
    rest_support: float = 1.0  # share of the gravity load the wearer keeps while seated


@dataclass(frozen=True)
class Overreach:
    """Adds a sinusoidal offset to the posture target, large enough to leave the joint box."""

    amplitude: tuple = (0.8, 2.5, 2.5, 2.5, 2.5)
    frequency: float = 0.4


@dataclass(frozen=True)
class UserConfig:
    skill: SkillParams = field(default_factory=SkillParams)
    rom: RangeOfMotion = field(default_factory=lambda: RangeOfMotion(0.80, 0.92))
    overreach: Overreach | None = None


@dataclass(frozen=True)
class SimConfig:
    model: ModelParams = field(default_factory=ModelParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    mode: Mode = Mode.JOINT_SPACE
    profile: ReferenceProfile = field(default_factory=ReferenceProfile)
    schedule: TrialSchedule = field(default_factory=TrialSchedule)
    users: tuple = (UserConfig(), UserConfig())
    transport: str = "loopback"
    channel: ChannelModel = field(default_factory=ChannelModel)
    push: Push | None = None
    chair: Chair | None = field(default_factory=Chair)
    duration: float | None = None  # stop early (s); default is the whole schedule
    max_failures: int = 10
    condition: str = ""
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if len(self.users) != 2:
            raise ValueError("a dyad needs exactly two users")
        if self.transport not in ("loopback", "channel"):
            raise ValueError("transport must be 'loopback' or 'channel'")


# -- log ----------------------------------------------------------------------


class DyadLog:
    """Per-tick arrays for both users, indexed [tick, user, ...]."""

    def __init__(self, n: int, dt: float, meta: dict | None = None):
        self.dt = dt
        self.meta = dict(meta or {})
        self.n = 0
        self.t = np.zeros(n)
        self.phase = np.zeros(n, dtype=np.int8)
        self.trial = np.zeros(n, dtype=np.int32)
        self.z_target = np.zeros(n)
        self.q = np.zeros((n, 2, NQ))
        self.qd = np.zeros((n, 2, NQ))
        self.tau_m = np.zeros((n, 2, NU))
        self.tau_int = np.zeros((n, 2, NQ))
        self.tau_des = np.zeros((n, 2, NQ))
        self.gravity_share = np.zeros((n, 2, NQ))
        self.force = np.zeros((n, 2))
        self.com = np.zeros((n, 2, 2))
        self.vcom = np.zeros((n, 2, 2))
        self.dcm = np.zeros((n, 2, 2))
        self.qp_iters = np.zeros((n, 2), dtype=np.int32)
        self.qp_status = np.zeros((n, 2), dtype=np.int8)
        self.eom_residual = np.zeros((n, 2))
        self.stale = np.zeros((n, 2), dtype=bool)
        self.relaxed = np.zeros((n, 2), dtype=bool)
        self.peer_age = np.full((n, 2), np.inf)
        self.mode = np.zeros((n, 2), dtype=np.int8)
        self.active: list = []

    _ARRAYS = (
        "t phase trial z_target q qd tau_m tau_int tau_des gravity_share force com vcom dcm "
        "qp_iters qp_status eom_residual stale relaxed peer_age mode"
    ).split()

    def trim(self):
        for name in self._ARRAYS:
            setattr(self, name, getattr(self, name)[: self.n])
        return self

    @property
    def z_com(self):
        return self.com[:, :, 1]

    def phase_mask(self, phase: Phase, trial: int | None = None):
        m = self.phase == PHASE_CODES[Phase(phase)]
        if trial is not None:
            m &= self.trial == trial
        return m

    def equals(self, other: "DyadLog") -> bool:
        return self.n == other.n and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in self._ARRAYS
        ) and self.active == other.active

    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = {"schema": SCHEMA_VERSION, **self.meta}
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(self.n):
            head = [repr(float(self.t[k])), PHASE_NAMES[int(self.phase[k])], str(int(self.trial[k]))]
            for u in range(2):
                row = head + [USERS[u]]
                row += [repr(float(v)) for v in self.q[k, u]]
                row += [repr(float(v)) for v in self.qd[k, u]]
                row += [repr(float(v)) for v in self.tau_m[k, u]]
                row += [repr(float(v)) for v in self.tau_int[k, u]]
                row += [
                    repr(float(self.com[k, u, 1])),
                    repr(float(self.z_target[k])),
                    repr(float(self.dcm[k, u, 0])),
                    repr(float(self.dcm[k, u, 1])),
                    str(int(self.qp_iters[k, u])),
                    STATUS_NAMES[int(self.qp_status[k, u])],
                ]
                buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path):
        write_atomic(path, self.to_csv())


def write_atomic(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- loop ---------------------------------------------------------------------


class _Side:
    def __init__(self, idx: int, cfg: SimConfig, user: UserConfig, rom: RangeOfMotion, x_eq: float):
        self.idx = idx
        self.params = cfg.model
        self.ctrl = Controller(cfg.model, cfg.controller)
        skill = replace(user.skill, seed=derive_seed(cfg.seed, idx, user.skill.seed))
        self.human = Surrogate(cfg.model, skill, cfg.controller.dt, x_eq)
        self.user = user
        if cfg.transport == "loopback":
            self.link = Loopback()
        else:
            ch = cfg.channel
            self.link = Channel(replace(ch, seed=derive_seed(cfg.seed, 10 + idx, ch.seed)))
        self.seq = 0


def derive_seed(run_seed: int, stream: int, own_seed: int) -> int:
    """Independent stream per (run, consumer) so one --seed moves every random source."""
    return int(np.random.SeedSequence([int(run_seed), int(stream), int(own_seed)]).generate_state(1)[0])


def _external(state: ExoState, params: ModelParams, push_force: float, chair: Chair | None, seat_z: float):
    tau = np.zeros(NQ)
    if push_force:
        trunk_row = params._tables[0][2]
        tau += point_jacobian(state.q, trunk_row)[0] * push_force
    if chair is not None:
        hc = hip_coeff(params)
        Jh = point_jacobian(state.q, hc)
        z_hip = float(hc @ np.cos(SEGMENT_MAP @ state.q))
        pen = seat_z - z_hip
        if pen > 0:
            zdot = float(Jh[1] @ state.qdot)
            f = max(chair.stiffness * pen - chair.damping * zdot, 0.0)
            tau += Jh[1] * f
    return tau


def run_dyad(cfg: SimConfig, *, progress=None) -> DyadLog:
    """Run the schedule and return the tick log. Deterministic for a given config."""
    p = cfg.model.validate()
    dt = cfg.controller.dt
    rom = common_rom(cfg.users[0].rom, cfg.users[1].rom)
    profile = ReferenceProfile(
        kind=cfg.profile.kind,
        rom=rom,
        phase=cfg.profile.phase,
        onset_shift=cfg.profile.onset_shift,
        dwell=cfg.profile.dwell,
        n_levels=cfg.profile.n_levels,
        seed=cfg.profile.seed,
    )
    x_eq = cfg.controller.limits.x_eq
    sides = [_Side(i, cfg, cfg.users[i], rom, x_eq) for i in range(2)]
    total = cfg.schedule.total if cfg.duration is None else min(cfg.duration, cfg.schedule.total)
    n = int(round(total / dt))
    meta = {"condition": cfg.condition, "mode": cfg.mode.value, "dt": dt, "profile": profile.kind.value,
            "alpha": p.alpha, "rom": [rom.z_min, rom.z_max],
            "period": period(profile), "seed": cfg.seed}
    out = DyadLog(n, dt, meta)
    T = time_constant(p.h, p.g)

    q0 = sides[0].human.posture(target(0.0, profile))
    states = [ExoState(q0.copy(), np.zeros(NQ), 0.0), ExoState(q0.copy(), np.zeros(NQ), 0.0)]
    seat_q = sides[0].human.posture(rom.z_min)
    seat_z = float(hip_coeff(p) @ np.cos(SEGMENT_MAP @ seat_q)) - (cfg.chair.clearance if cfg.chair else 0.0)

    fail_run = [0, 0]
    for k in range(n):
        t = k * dt
        ph, trial, t_ph = trial_phase(t, cfg.schedule)
        if ph is Phase.DONE:
            break
        resting = ph is Phase.REST
        # between periods the wearers hold the level the next period starts from
        z_t = target(0.0, profile) if resting else target(t_ph, profile)
        mode = cfg.mode if ph is Phase.COUPLED else Mode.TRANSPARENT

        dyns, coms, taus_int = [], [], []
        for s, st in zip(sides, states):
            dyn, com = dynamics_and_com(st.q, st.qdot, 0.0, p)
            q_des = s.human.posture(s.human.follow(z_t))
            if s.user.overreach is not None:
                ov = s.user.overreach
                q_des = q_des + np.asarray(ov.amplitude) * np.sin(2 * math.pi * ov.frequency * t + np.arange(NQ))
            support = cfg.chair.rest_support if (resting and cfg.chair) else 1.0
            tau_int = s.human.human_torque(st, q_des, t, support=support, g_vec=dyn.g_vec)
            dyns.append(dyn)
            coms.append(com)
            taus_int.append(tau_int)

        # exchange snapshots
        ts = timestamp_us(t)
        for i, (s, st) in enumerate(zip(sides, states)):
            msg = StateMessage(s.seq, ts, st.q, st.qdot, coms[i].p_com[1], coms[i].v_com[1])
            s.seq += 1
            sides[1 - i].link.send(encode(msg), t)
        peers = []
        for s in sides:
            m = s.link.poll(t)
            peers.append(None if m is None else PeerSnapshot(
                np.array(m.q), np.array(m.qdot), m.z_com, m.zdot_com, m.time, m.seq))

        outs = []
        for i, (s, st) in enumerate(zip(sides, states)):
            o = s.ctrl.step(st, taus_int[i], peers[i], mode, now=t, dyn=dyns[i], com=coms[i])
            outs.append(o)
            fail_run[i] = fail_run[i] + 1 if o.qp_failed else 0

        # log
        out.t[k] = t
        out.phase[k] = PHASE_CODES[ph]
        out.trial[k] = trial
        out.z_target[k] = z_t
        for i in range(2):
            st, o, s = states[i], outs[i], sides[i]
            out.q[k, i] = st.q
            out.qd[k, i] = st.qdot
            out.tau_m[k, i] = o.tau_motor
            out.tau_int[k, i] = taus_int[i]
            out.tau_des[k, i] = o.tau_coupling
            out.gravity_share[k, i] = s.human.gravity_share
            out.force[k, i] = o.coupling_force
            out.com[k, i] = coms[i].p_com
            out.vcom[k, i] = coms[i].v_com
            out.dcm[k, i] = coms[i].p_com + T * coms[i].v_com
            out.qp_iters[k, i] = o.iterations
            out.qp_status[k, i] = STATUS_CODES[o.qp_status]
            out.eom_residual[k, i] = o.eom_residual
            out.stale[k, i] = o.stale
            out.relaxed[k, i] = o.relaxed
            if peers[i] is not None:
                out.peer_age[k, i] = t - peers[i].time
            out.mode[k, i] = ("transparent", "joint_space", "task_space").index(o.mode.value)
        out.active.append((tuple(sorted(outs[0].active_constraints)), tuple(sorted(outs[1].active_constraints))))
        out.n = k + 1

        if max(fail_run) > cfg.max_failures:
            out.trim()
            raise SimulationAbort(f"QP failed on more than {cfg.max_failures} consecutive ticks at t={t:.3f}", out)

        # integrate both plants
        new_states = []
        for i, (s, st) in enumerate(zip(sides, states)):
            pf = 0.0
            if cfg.push is not None and USERS[i] == cfg.push.user and cfg.push.start <= t < cfg.push.start + cfg.push.duration:
                pf = cfg.push.force
            ext = _external(st, p, pf, cfg.chair if resting else None, seat_z)
            new_states.append(integrate_step(st, outs[i].tau_motor, taus_int[i], dyns[i], dt, p, ext))
        states = new_states
        if progress is not None and k % 5000 == 0:
            progress(k, n)
    return out.trim()
