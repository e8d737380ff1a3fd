"""Invariant and oracle checks shared by ``exodyad verify`` and the tests.

Each check returns a ``CheckResult``. Model functions can be swapped through
keyword arguments so a deliberately broken implementation can be shown to fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import qp
from .transport import FRAME_SIZE, DecodeError, StateMessage, decode, encode

GOLDEN_MESSAGE = StateMessage(42, 1234567, (0.1, -0.2, 0.3, -0.4, 0.5), (1.0, -1.5, 2.0, -2.5, 3.0), 0.85, -0.125)
GOLDEN_FRAME = bytes.fromhex(
    "58324459012a00000087d61200000000009a9999999999b93f9a9999999999c9bf333333333333d33f"
    "9a9999999999d9bf000000000000e03f000000000000f03f000000000000f8bf0000000000000040"
    "00000000000004c00000000000000840333333333333eb3f000000000000c0bf1f15ebf3"
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<28} worst={self.worst:.3e} tol={self.tol:.0e} ({self.seconds:.1f}s)"


def random_states(n, rng, params=None):
    """Joint configurations inside the box and velocities within +-3 rad/s."""
    params = params or mdl.ModelParams()
    lo, hi = params.lower, params.upper
    for _ in range(n):
        yield rng.uniform(lo, hi), rng.uniform(-3, 3, mdl.NQ)


def _timed(name, tol, fn):
    t0 = time.perf_counter()
    worst = float(fn())
    return CheckResult(name, bool(worst <= tol), worst, tol, time.perf_counter() - t0)


def check_gravity(n=1000, seed=0, params=None, gravity=mdl.gravity_vector, h=1e-5):
    params = params or mdl.ModelParams()

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for q, _ in random_states(n, rng, params):
            fd = np.empty(mdl.NQ)
            for k in range(mdl.NQ):
                e = np.zeros(mdl.NQ)
                e[k] = h
                fd[k] = (mdl.potential_energy(q + e, params) - mdl.potential_energy(q - e, params)) / (2 * h)
            worst = max(worst, np.abs(gravity(q, params) - fd).max())
        return worst

    return _timed("gravity vs dV/dq", 1e-6, run)


def check_com_jacobian(n=1000, seed=1, params=None, h=1e-6):
    params = params or mdl.ModelParams()

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for q, v in random_states(n, rng, params):
            J = mdl.com_kinematics(q, v, params).J_com
            fd = np.empty((2, mdl.NQ))
            for k in range(mdl.NQ):
                e = np.zeros(mdl.NQ)
                e[k] = h
                fd[:, k] = (mdl.forward_kinematics(q + e, params)["com"] - mdl.forward_kinematics(q - e, params)["com"]) / (2 * h)
            worst = max(worst, np.abs(J - fd).max())
        return worst

    return _timed("CoM Jacobian vs FD", 1e-6, run)


def check_skew(n=1000, seed=2, params=None):
    params = params or mdl.ModelParams()

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for q, qd in random_states(n, rng, params):
            Mdot = np.tensordot(qd, mdl.mass_matrix_derivative(q, params), axes=1)
            N = Mdot - 2 * mdl.coriolis_matrix(q, qd, params)
            v = rng.normal(size=mdl.NQ)
            worst = max(worst, abs(v @ N @ v))
        return worst

    return _timed("v'(Mdot-2C)v", 1e-8, run)


def check_bias_vector(n=200, seed=3, params=None):
    """Fast velocity product against the Coriolis-matrix form."""
    params = params or mdl.ModelParams()

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for q, qd in random_states(n, rng, params):
            b = mdl.dynamics_terms(q, qd, 0.0, params).b
            worst = max(worst, np.abs(b - mdl.coriolis_matrix(q, qd, params) @ qd).max())
        return worst

    return _timed("b vs C(q,qdot)qdot", 1e-9, run)


def random_qp(rng) -> qp.QpProblem:
    """Feasible strictly convex QP with n <= 10, m <= 12 and mixed row types."""
    n = int(rng.integers(2, 11))
    m = int(rng.integers(1, 13))
    L = rng.normal(size=(n, n))
    P = L @ L.T + 0.1 * np.eye(n)
    c = 3 * rng.normal(size=n)
    A = rng.normal(size=(m, n))
    ax = A @ rng.normal(size=n)
    lo, hi = np.empty(m), np.empty(m)
    for i in range(m):
        kind = rng.integers(4)
        if kind == 0:
            lo[i] = hi[i] = ax[i]
        elif kind == 1:
            lo[i], hi[i] = ax[i] - rng.uniform(0, 1), qp.INF
        elif kind == 2:
            lo[i], hi[i] = -qp.INF, ax[i] + rng.uniform(0, 1)
        else:
            lo[i], hi[i] = ax[i] - rng.uniform(0, 1), ax[i] + rng.uniform(0, 1)
    return qp.QpProblem(P, c, A, lo, hi)


def qp_error(p: qp.QpProblem) -> float:
    s = qp.solve(p)
    if not s.solved:
        return np.inf
    return float(np.abs(s.x - qp.kkt_oracle(p).x).max())


def check_qp_random(n=100, seed=4):
    def run():
        rng = np.random.default_rng(seed)
        return max(qp_error(random_qp(rng)) for _ in range(n))

    return _timed("ADMM vs KKT (random)", 1e-5, run)


def live_qps(n=50, seed=5, every=7):
    """QPs captured from a short solo run of one controller under a noisy surrogate."""
    from .controller import Controller, ControllerConfig
    from .human import Surrogate, SkillParams
    from .interaction import Mode

    p = mdl.ModelParams()
    cfg = ControllerConfig()
    ctrl = Controller(p, cfg)
    hum = Surrogate(p, SkillParams(noise_std=5.0, seed=seed, strength=200.0), cfg.dt)
    q = hum.posture(0.86)
    st = mdl.ExoState(q, np.zeros(mdl.NQ))
    out = []
    k = 0
    while len(out) < n:
        t = k * cfg.dt
        z = 0.86 + 0.06 * np.sin(2 * np.pi * 0.5 * t)
        dyn, com = mdl.dynamics_and_com(st.q, st.qdot, 0.0, p)
        tau_h = hum.human_torque(st, hum.posture(z), t, g_vec=dyn.g_vec)
        o = ctrl.step(st, tau_h, None, Mode.TRANSPARENT, t, dyn, com)
        if k % every == 0:
            pr = ctrl.last_problem
            out.append(qp.QpProblem(pr.P.copy(), pr.c.copy(), pr.A.copy(), pr.l.copy(), pr.u.copy(), list(pr.labels)))
        tau_f = mdl.friction_torque(st.qdot[1:], p)
        qdd = np.linalg.solve(dyn.M, mdl.SELECTION.T @ (o.tau_motor + tau_f) + tau_h - dyn.b - dyn.g_vec)
        v = st.qdot + cfg.dt * qdd
        st = mdl.ExoState(st.q + cfg.dt * v, v, t + cfg.dt)
        k += 1
    return out


def check_qp_live(n=50):
    def run():
        return max(qp_error(p) for p in live_qps(n))

    return _timed("ADMM vs KKT (live ticks)", 1e-5, run)


def check_codec():
    def run():
        frame = encode(GOLDEN_MESSAGE)
        if frame != GOLDEN_FRAME or len(frame) != FRAME_SIZE or decode(frame) != GOLDEN_MESSAGE:
            return 1.0
        missed = 0
        for i in range(len(frame)):
            for bit in range(8):
                bad = bytearray(frame)
                bad[i] ^= 1 << bit
                try:
                    decode(bytes(bad))
                    missed += 1
                except DecodeError:
                    pass
        return float(missed)

    return _timed("codec golden + corruption", 0.0, run)


def run_all(echo=print) -> list[CheckResult]:
    out = []
    for fn in (check_gravity, check_com_jacobian, check_skew, check_bias_vector, check_qp_random, check_qp_live, check_codec):
        r = fn()
        out.append(r)
        if echo:
            echo(r.line())
    return out
