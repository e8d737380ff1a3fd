"""Small dense convex QP solver.

Solves ``min 1/2 x'Px + c'x  s.t.  l <= Ax <= u`` with an operator-splitting
ADMM iteration in the style of OSQP: Ruiz equilibration, per-row step sizes
(equality rows get a larger rho), over-relaxation, adaptive rho, primal
infeasibility certificates and a polish step on the detected active set.

``kkt_oracle`` is an independent brute-force solver that enumerates active
sets. It is only meant for verification on small problems.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure Python fallback, much slower

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

INF = 1e20

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"


@dataclass
class QpProblem:
    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        if self.P.shape != (n, n) or self.l.size != m or self.u.size != m:
            raise ValueError("inconsistent QP dimensions")
        if not np.allclose(self.P, self.P.T, atol=1e-12, rtol=0):
            raise ValueError("P must be symmetric")
        if n and np.linalg.eigvalsh(self.P).min() < -1e-10:
            raise ValueError("P must be positive semidefinite")
        if np.any(self.l > self.u):
            raise ValueError("l must be <= u elementwise")
        if self.labels and len(self.labels) != m:
            raise ValueError("one label per constraint row")

    @classmethod
    def trusted(cls, P, c, A, l, u, labels=()):
        """Skip validation; for hot loops whose blocks are correct by construction."""
        obj = object.__new__(cls)
        obj.P, obj.c, obj.A, obj.l, obj.u, obj.labels = P, c, A, l, u, labels
        return obj

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.c @ x)

    def primal_residual(self, x) -> float:
        ax = self.A @ x
        viol = np.maximum(ax - self.u, 0.0) + np.maximum(self.l - ax, 0.0)
        return float(viol.max(initial=0.0))

    def dual_residual(self, x, y) -> float:
        r = self.P @ x + self.c + self.A.T @ y
        return float(np.abs(r).max(initial=0.0))


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED

    def active(self, problem: QpProblem, tol: float = 1e-7) -> list[int]:
        """Rows whose multiplier is nonzero (OSQP sign convention)."""
        return [i for i in range(problem.m) if abs(self.y[i]) > tol]


@dataclass
class Settings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_prim_inf: float = 1e-7
    max_iter: int = 4000
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    scaling_iter: int = 10
    polish: bool = True
    polish_refine: int = 3


@njit(cache=True)
def _ruiz(P, c, A, iters):
    """Ruiz equilibration of the KKT matrix plus a cost scale."""
    n = P.shape[0]
    m = A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps = P.copy()
    As = A.copy()
    cs = c.copy()
    for _ in range(iters):
        dd = np.empty(n)
        for j in range(n):
            v = 0.0
            for i in range(n):
                v = max(v, abs(Ps[i, j]))
            for i in range(m):
                v = max(v, abs(As[i, j]))
            dd[j] = 1.0 / np.sqrt(min(max(v, 1e-4), 1e4))
        ee = np.empty(m)
        for i in range(m):
            v = 0.0
            for j in range(n):
                v = max(v, abs(As[i, j]))
            ee[i] = 1.0 / np.sqrt(min(max(v, 1e-4), 1e4))
        for i in range(n):
            for j in range(n):
                Ps[i, j] *= dd[i] * dd[j]
            cs[i] *= dd[i]
            D[i] *= dd[i]
        for i in range(m):
            for j in range(n):
                As[i, j] *= ee[i] * dd[j]
            E[i] *= ee[i]
    # cost scaling keeps the objective gradient near unit size
    mean_p = 1.0
    if n > 0:
        tot = 0.0
        for j in range(n):
            v = 0.0
            for i in range(n):
                v = max(v, abs(Ps[i, j]))
            tot += v
        mean_p = tot / n
    cmax = 0.0
    for i in range(n):
        cmax = max(cmax, abs(cs[i]))
    gamma = 1.0 / min(max(max(mean_p, cmax), 1e-4), 1e4)
    return gamma * Ps, gamma * cs, As, D, E, gamma


@njit(cache=True)
def _rho_vector(l, u, rho):
    m = l.size
    r = np.empty(m)
    for i in range(m):
        if l[i] <= -INF and u[i] >= INF:
            r[i] = 1e-6
        elif u[i] - l[i] < 1e-10:
            r[i] = 1e3 * rho
        else:
            r[i] = rho
    return r


@njit(cache=True)
def _factor(P, A, rv, sigma):
    n = P.shape[0]
    K = P + sigma * np.eye(n) + A.T @ (rv.reshape(-1, 1) * A)
    return np.linalg.cholesky(K)


@njit(cache=True)
def _chol_solve(L, b):
    n = b.size
    w = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * w[k]
        w[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _amax(v):
    out = 0.0
    for i in range(v.size):
        out = max(out, abs(v[i]))
    return out


@njit(cache=True)
def _admm_kernel(P, c, A, ls, us, D, E, gam, x, y, z, state, sigma, alpha, eps_abs, eps_rel,
                 eps_inf, max_iter, adaptive, interval, tol):
    """Run ADMM iterations in place until convergence, infeasibility or max_iter.

    ``state`` = [iteration, rho]. Returns 1 when the scaled residuals meet the
    tolerance, 2 for a primal infeasibility certificate and 0 at max_iter.
    """
    n = x.size
    m = y.size
    it = int(state[0])
    rho = state[1]
    rv = _rho_vector(ls, us, rho)
    L = _factor(P, A, rv, sigma)
    minE = 1.0
    if m > 0:
        minE = E.min()
    while it < max_iter:
        it += 1
        x_prev = x.copy()
        y_prev = y.copy()
        rhs = sigma * x - c + A.T @ (rv * z - y)
        xt = _chol_solve(L, rhs)
        zt = A @ xt
        for i in range(n):
            x[i] = alpha * xt[i] + (1 - alpha) * x_prev[i]
        for i in range(m):
            zr = alpha * zt[i] + (1 - alpha) * z[i]
            zn = min(max(zr + y[i] / rv[i], ls[i]), us[i])
            y[i] = y[i] + rv[i] * (zr - zn)
            z[i] = zn

        Ax = A @ x
        Px = P @ x
        Aty = A.T @ y
        r_prim = _amax((Ax - z) / E)
        r_dual = _amax((Px + c + Aty) / D) / gam
        eps_prim = eps_abs + eps_rel * max(_amax(Ax / E), _amax(z / E))
        eps_dual = eps_abs + eps_rel / gam * max(_amax(Px / D), _amax(Aty / D), _amax(c / D))
        if r_prim <= eps_prim and r_dual <= eps_dual:
            state[0] = it
            state[1] = rho
            return 1

        dy = y - y_prev
        ndy = _amax(dy)
        if ndy > 1e-30 and it > 1:
            if _amax((A.T @ dy) / D) <= eps_inf * ndy / minE:
                val = 0.0
                for i in range(m):
                    if dy[i] > 0:
                        val += us[i] * dy[i]
                    elif dy[i] < 0:
                        val += ls[i] * dy[i]
                if val < -eps_inf * ndy:
                    state[0] = it
                    state[1] = rho
                    return 2

        if adaptive and it % interval == 0:
            num = _amax(Ax - z) / max(_amax(Ax), _amax(z), 1e-30)
            den = _amax(Px + c + Aty) / max(_amax(Px), _amax(Aty), _amax(c), 1e-30)
            rho_new = min(max(rho * np.sqrt(num / max(den, 1e-30)), 1e-6), 1e6)
            if rho_new > rho * tol or rho_new < rho / tol:
                rho = rho_new
                rv = _rho_vector(ls, us, rho)
                L = _factor(P, A, rv, sigma)
    state[0] = it
    state[1] = rho
    return 0


@njit(cache=True)
def _lu(K):
    """LU with partial pivoting; returns (LU, piv, ok)."""
    n = K.shape[0]
    LU = K.copy()
    piv = np.arange(n)
    scale = 1.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(K[i, j]))
    for j in range(n):
        p = j
        best = abs(LU[j, j])
        for i in range(j + 1, n):
            if abs(LU[i, j]) > best:
                best = abs(LU[i, j])
                p = i
        if best < 1e-13 * scale:
            return LU, piv, False
        if p != j:
            for k in range(n):
                tmp = LU[j, k]
                LU[j, k] = LU[p, k]
                LU[p, k] = tmp
            t = piv[j]
            piv[j] = piv[p]
            piv[p] = t
        for i in range(j + 1, n):
            LU[i, j] /= LU[j, j]
            f = LU[i, j]
            if f != 0.0:
                for k in range(j + 1, n):
                    LU[i, k] -= f * LU[j, k]
    return LU, piv, True


@njit(cache=True)
def _lu_solve(LU, piv, b):
    n = b.size
    x = np.empty(n)
    for i in range(n):
        x[i] = b[piv[i]]
    for i in range(n):
        for k in range(i):
            x[i] -= LU[i, k] * x[k]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= LU[i, k] * x[k]
        x[i] /= LU[i, i]
    return x


@njit(cache=True)
def _polish_kernel(P, c, A, l, u, zs, ys, ls, us, refine, x_out, y_out):
    """Solve the KKT system on the active set guessed from the scaled iterate.

    Returns (ok, primal_residual, dual_residual); x_out/y_out get the result.
    """
    n = c.size
    m = l.size
    rows = np.empty(m, dtype=np.int64)
    side = np.empty(m, dtype=np.int64)  # -1 lower, +1 upper, 0 equality
    k = 0
    for i in range(m):
        lo = (zs[i] - ls[i] < -ys[i]) and ls[i] > -INF
        up = (us[i] - zs[i] < ys[i]) and us[i] < INF
        if l[i] == u[i]:
            # equality rows are always active and their multiplier has no sign
            rows[k] = i
            side[k] = 0
            k += 1
        elif lo:
            rows[k] = i
            side[k] = -1
            k += 1
        elif up:
            rows[k] = i
            side[k] = 1
            k += 1
    N = n + k
    K = np.zeros((N, N))
    rhs = np.zeros(N)
    for i in range(n):
        for j in range(n):
            K[i, j] = P[i, j]
        rhs[i] = -c[i]
    for a in range(k):
        r = rows[a]
        for j in range(n):
            K[n + a, j] = A[r, j]
            K[j, n + a] = A[r, j]
        rhs[n + a] = u[r] if side[a] == 1 else l[r]
    LU, piv, ok = _lu(K)
    if not ok:
        return False, np.inf, np.inf
    sol = _lu_solve(LU, piv, rhs)
    for _ in range(refine):
        sol = sol + _lu_solve(LU, piv, rhs - K @ sol)
    for i in range(N):
        if not np.isfinite(sol[i]):
            return False, np.inf, np.inf
    for a in range(k):
        lam = sol[n + a]
        if side[a] == -1 and lam > 1e-9:
            return False, np.inf, np.inf
        if side[a] == 1 and lam < -1e-9:
            return False, np.inf, np.inf
    for i in range(n):
        x_out[i] = sol[i]
    for i in range(m):
        y_out[i] = 0.0
    for a in range(k):
        y_out[rows[a]] = sol[n + a]
    ax = A @ x_out
    pres = 0.0
    for i in range(m):
        pres = max(pres, ax[i] - u[i], l[i] - ax[i])
    dres = _amax(P @ x_out + c + A.T @ y_out)
    return True, pres, dres


class AdmmSolver:
    """Reusable solver that keeps the previous solution for warm starts."""

    def __init__(self, settings: Settings | None = None):
        self.settings = settings or Settings()
        self._warm: tuple[np.ndarray, np.ndarray] | None = None

    def warm_start(self, x, y):
        self._warm = (np.asarray(x, dtype=float).copy(), np.asarray(y, dtype=float).copy())

    def reset(self):
        self._warm = None

    def solve(self, p: QpProblem) -> QpSolution:
        warm = self._warm
        if warm is not None and (warm[0].size != p.n or warm[1].size != p.m):
            warm = None
        sol = _admm(p, self.settings, warm)
        if sol.status == SOLVED:
            self._warm = (sol.x.copy(), sol.y.copy())
        return sol


def solve(p: QpProblem, settings: Settings | None = None, warm: QpSolution | None = None) -> QpSolution:
    ws = None if warm is None else (warm.x, warm.y)
    return _admm(p, settings or Settings(), ws)


def _admm(p: QpProblem, st: Settings, warm) -> QpSolution:
    n, m = p.n, p.m
    l = np.clip(p.l, -INF, INF)
    u = np.clip(p.u, -INF, INF)
    P, c, A, D, E, gam = _ruiz(p.P, p.c, p.A, st.scaling_iter)
    ls = np.where(l <= -INF, -INF, l * E)
    us = np.where(u >= INF, INF, u * E)

    if warm is not None:
        x = warm[0] / D
        y = warm[1] / E * gam
        z = np.clip(A @ x, ls, us)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.zeros(m)

    state = np.array([0.0, st.rho])
    last_polish_key = None
    best = None
    status = MAX_ITER
    while True:
        code = _admm_kernel(
            P, c, A, ls, us, D, E, gam, x, y, z, state, st.sigma, st.alpha, st.eps_abs, st.eps_rel,
            st.eps_prim_inf, st.max_iter, st.adaptive_rho, st.adaptive_rho_interval, st.adaptive_rho_tolerance,
        )
        it = int(state[0])
        if code == 2:
            status = PRIMAL_INFEASIBLE
            break
        if code == 0:
            break
        if st.polish:
            key = _active_key(z, y, ls, us)
            if key != last_polish_key:
                last_polish_key = key
                xp, yp = np.empty(n), np.empty(m)
                ok, pres, dres = _polish_kernel(
                    p.P, p.c, p.A, l, u, z, y, ls, us, st.polish_refine, xp, yp
                )
                if ok and pres <= st.eps_abs and dres <= st.eps_abs:
                    return QpSolution(xp, yp, SOLVED, it, pres, dres, polished=True)
        xu, yu = D * x, E * y / gam
        cand = QpSolution(xu, yu, SOLVED, it)
        cand.primal_residual = p.primal_residual(xu)
        cand.dual_residual = p.dual_residual(xu, yu)
        if cand.primal_residual <= st.eps_abs and cand.dual_residual <= st.eps_abs:
            return cand
        best = cand
        if it >= st.max_iter:
            break

    if best is not None and status == MAX_ITER:
        best.status = MAX_ITER
        best.iterations = it
        return best
    xu, yu = D * x, E * y / gam
    sol = QpSolution(xu, yu, status, it)
    sol.primal_residual = p.primal_residual(xu)
    sol.dual_residual = p.dual_residual(xu, yu)
    return sol


def _active_key(z, y, l, u):
    lower = (z - l < -y) & (l > -INF)
    upper = (u - z < y) & (u < INF)
    return lower.tobytes() + upper.tobytes()


def _kkt_solve(p: QpProblem, rows, rhs, refine=2):
    n = p.n
    k = len(rows)
    As = p.A[rows] if k else np.zeros((0, n))
    K = np.zeros((n + k, n + k))
    K[:n, :n] = p.P
    K[:n, n:] = As.T
    K[n:, :n] = As
    b = np.concatenate([-p.c, np.asarray(rhs, dtype=float)])
    try:
        with warnings.catch_warnings():
            # dependent active rows give a singular K; rejected just below
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(K, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * max(1.0, np.abs(K).max()):
        # dependent rows: accept only if the system is still consistent
        sol = np.linalg.lstsq(K, b, rcond=None)[0]
        if np.abs(K @ sol - b).max() > 1e-9 * max(1.0, np.abs(b).max()):
            return None
        return sol[:n], sol[n:]
    sol = sla.lu_solve(lu, b, check_finite=False)
    for _ in range(refine):
        sol = sol + sla.lu_solve(lu, b - K @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], sol[n:]


def kkt_oracle(p: QpProblem, tol: float = 1e-8, max_active: int | None = None) -> QpSolution:
    """Enumerate active sets in order of size; return the best KKT point.

    Equality rows (l == u) are always active. For each candidate set the
    equality-constrained KKT system is solved directly; a candidate is
    accepted when it is primal feasible and every multiplier has the sign its
    bound requires. Among accepted candidates of the smallest size the one
    with the lowest objective wins (for strictly convex problems there is
    only one).
    """
    eq = [i for i in range(p.m) if p.l[i] == p.u[i]]
    ineq = [i for i in range(p.m) if p.l[i] != p.u[i]]
    choices = []
    for i in ineq:
        opts = []
        if p.l[i] > -INF:
            opts.append(("l", i))
        if p.u[i] < INF:
            opts.append(("u", i))
        choices.append(opts)
    limit = len(ineq) if max_active is None else min(max_active, len(ineq))
    limit = min(limit, max(p.n - len(eq), 0))
    scale = 1.0 + max(np.abs(p.l[np.abs(p.l) < INF]).max(initial=0.0), np.abs(p.u[np.abs(p.u) < INF]).max(initial=0.0))

    best = None
    for size in range(limit + 1):
        for combo in itertools.combinations(range(len(ineq)), size):
            for sides in itertools.product(*(choices[j] for j in combo)):
                rows = eq + [i for _, i in sides]
                rhs = [p.l[i] for i in eq] + [p.l[i] if s == "l" else p.u[i] for s, i in sides]
                sol = _kkt_solve(p, rows, rhs)
                if sol is None:
                    continue
                x, lam = sol
                if p.primal_residual(x) > tol * scale:
                    continue
                ok = True
                for (s, i), lv in zip(sides, lam[len(eq):]):
                    if (s == "l" and lv > tol) or (s == "u" and lv < -tol):
                        ok = False
                        break
                if not ok:
                    continue
                y = np.zeros(p.m)
                y[rows] = lam
                obj = p.objective(x)
                if best is None or obj < best[0] - 1e-12:
                    best = (obj, x, y)
        if best is not None:
            _, x, y = best
            out = QpSolution(x, y, SOLVED, iterations=0)
            out.primal_residual = p.primal_residual(x)
            out.dual_residual = p.dual_residual(x, y)
            return out
    return QpSolution(np.full(p.n, np.nan), np.zeros(p.m), PRIMAL_INFEASIBLE)
