"""Swing trajectory optimisation: condensed transcription and an SQP solver.

Decision variables are the joint accelerations ``qdd[j, k]`` for ``k < N``.
With explicit Euler updates and fixed initial state, every ``q[m]`` and
``qd[m]`` is affine in them::

    qd[m] = qd0 + dt * sum_{k<m} qdd[k]
    q[m]  = q0 + m*dt*qd0 + dt^2 * sum_{k<m-1} (m-1-k) * qdd[k]

so the cost is a convex quadratic, the joint limits are linear, and only the
terminal paddle constraints (position, velocity, normal) are nonlinear.

For fixed values of the terminal state (q_f, qd_f) and of any active
joint-limit rows, the cost-minimizing accelerations follow in closed form, so
the SQP runs over that small reduced vector.  Each step linearizes the
terminal residuals, keeps them as balls with an exact l1-type penalty, uses
the Lagrangian curvature (finite differences of the constraint Jacobians),
and solves the subproblem with the ADMM solver in ``_admm``.

Internally the accelerations are scaled by ``1/T^2`` and the cost by the mean
of its Hessian diagonal; both scalings are undone on output.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from . import arm_model as am
from ._admm import AdmmSettings, admm_solve, polish
from .errors import InfeasibleProblem, InvalidParameters

BALL_SHRINK = 0.99
BOX_TIGHTEN = 1e-7
MU0 = 1e2
MU_MAX = 1e8
# an infeasible iterate whose scaled terminal violation has not dropped by
# STALL_GAIN within STALL_WINDOW iterations is taken as an unreachable target
STALL_WINDOW = 8
STALL_GAIN = 0.01


@dataclass(frozen=True)
class OcpParams:
    q0: np.ndarray
    qd0: np.ndarray
    N: int = 50
    dt: float = 0.01
    w_a: float = 1e-4
    w_v: float = 1e-2
    eps_p: float = 1e-4
    eps_v: float = 0.04
    eps_o: float = (2 * math.sin(math.radians(2.5))) ** 2
    max_iter_cold: int = 50
    max_iter_warm: int = 15
    tol: float = 1e-6
    reg: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "q0", np.array(self.q0, dtype=float))
        object.__setattr__(self, "qd0", np.array(self.qd0, dtype=float))
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParameters("N must be an integer >= 2")
        object.__setattr__(self, "N", int(self.N))
        if not self.dt > 0:
            raise InvalidParameters("dt must be positive")
        if self.w_a < 0 or self.w_v < 0 or self.w_a + self.w_v <= 0:
            raise InvalidParameters("weights must be >= 0 and not both zero")
        for k in ("eps_p", "eps_v", "eps_o"):
            if not getattr(self, k) > 0:
                raise InvalidParameters(f"{k} must be positive")
        if self.q0.shape != self.qd0.shape or self.q0.ndim != 1:
            raise InvalidParameters("q0 and qd0 must be vectors of equal length")
        if not (np.all(np.isfinite(self.q0)) and np.all(np.isfinite(self.qd0))):
            raise InvalidParameters("initial state must be finite")

    @property
    def T(self) -> float:
        return self.N * self.dt

    def with_initial(self, q0, qd0, dt=None) -> "OcpParams":
        return replace(self, q0=np.array(q0, float), qd0=np.array(qd0, float),
                       dt=self.dt if dt is None else float(dt))

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["q0"] = self.q0.tolist()
        d["qd0"] = self.qd0.tolist()
        return d


@dataclass(frozen=True)
class TerminalSpec:
    p_des: np.ndarray
    v_des: np.ndarray
    o_des: np.ndarray

    def __post_init__(self):
        for k in ("p_des", "v_des", "o_des"):
            object.__setattr__(self, k, np.array(getattr(self, k), dtype=float).reshape(3))
        if abs(np.linalg.norm(self.o_des) - 1.0) > 1e-9:
            raise InvalidParameters("o_des must be a unit vector")

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("p_des", "v_des", "o_des")}


@dataclass
class OcpSolution:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    converged: bool
    iterations: int
    solve_time: float
    residuals: tuple  # (pos m, vel m/s, orient)
    cost: float
    status: str = ""
    dt: float = 0.0
    admm_iterations: int = 0
    warm_started: bool = False
    # warm-start memory
    mu: float = MU0
    active: tuple = ()
    y: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.qdd.shape[1]

    def within_tolerances(self, params: OcpParams) -> bool:
        rp, rv, ro = self.residuals
        return rp**2 <= params.eps_p and rv**2 <= params.eps_v and ro**2 <= params.eps_o

    def summary(self) -> dict:
        return {
            "converged": bool(self.converged), "iterations": int(self.iterations),
            "status": self.status, "solve_ms": 1e3 * self.solve_time,
            "pos_residual_m": float(self.residuals[0]), "vel_residual_mps": float(self.residuals[1]),
            "orient_residual": float(self.residuals[2]), "cost": float(self.cost),
        }

    def to_dict(self):
        return {
            "q": self.q.tolist(), "qd": self.qd.tolist(), "qdd": self.qdd.tolist(),
            "converged": bool(self.converged), "iterations": int(self.iterations),
            "solve_time": float(self.solve_time), "residuals": [float(r) for r in self.residuals],
            "cost": float(self.cost), "status": self.status, "dt": float(self.dt),
        }


def _euler_maps(N: int, dt: float):
    """Per-joint affine maps (N+1, N): qd = qd0 + Lv a, q = q0 + m dt qd0 + Lq a."""
    m = np.arange(N + 1)[:, None]
    k = np.arange(N)[None, :]
    Lv = np.where(k < m, dt, 0.0)
    Lq = dt * dt * np.maximum(m - 1 - k, 0).astype(float)
    return Lv, Lq


class OcpProblem:
    """Condensed transcription for one arm, initial state and terminal target."""

    def __init__(self, arm: am.ArmParams, params: OcpParams, terminal: TerminalSpec):
        n = arm.n_joints
        if params.q0.shape != (n,):
            raise InvalidParameters(f"q0 must have {n} entries")
        self.arm = arm
        self.params = params
        self.terminal = terminal
        self.n = n
        N, dt = params.N, params.dt
        self.N = N
        self.Lv, self.Lq = _euler_maps(N, dt)
        self.sx = 1.0 / (N * dt) ** 2
        P = 2.0 * (params.w_a * np.eye(N) + params.w_v * (self.Lv.T @ self.Lv))
        Pxi = (self.sx * self.sx) * P
        self.kappa = float(np.mean(np.diag(Pxi)))
        self.P_blk = Pxi / self.kappa + params.reg * np.eye(N)
        self.Pinv_blk = np.linalg.inv(self.P_blk)
        colsum = self.Lv.sum(axis=0)  # Lv' 1
        self.c = ((2.0 * params.w_v * self.sx / self.kappa) * np.outer(params.qd0, colsum)).ravel()
        self.x_free = -(self.c.reshape(n, N) @ self.Pinv_blk.T).ravel()
        self.gq = self.sx * self.Lq[N]
        self.gv = self.sx * self.Lv[N]
        self.qf_free = params.q0 + N * dt * params.qd0
        # node offsets for the joint limits, shape (n, N+1)
        self.q_free = params.q0[:, None] + dt * np.arange(N + 1)[None, :] * params.qd0[:, None]
        self.eps = np.array([params.eps_p, params.eps_v, params.eps_o])
        self._check_box()

    def _check_box(self):
        arm = self.arm
        if np.any(arm.q_max - arm.q_min <= 2 * BOX_TIGHTEN):
            raise InfeasibleProblem("joint limit box is empty")
        for m in (0, 1):
            qm = self.q_free[:, m]
            if np.any(qm < arm.q_min) or np.any(qm > arm.q_max):
                raise InfeasibleProblem(f"node {m} is fixed by the initial state and violates joint limits")

    # -- maps ------------------------------------------------------------
    @property
    def nx(self) -> int:
        return self.n * self.N

    def to_qdd(self, xi):
        return self.sx * np.asarray(xi).reshape(self.n, self.N)

    def to_xi(self, qdd):
        return (np.asarray(qdd, float) / self.sx).ravel()

    def terminal_state(self, xi):
        X = np.asarray(xi).reshape(self.n, self.N)
        return self.qf_free + X @ self.gq, self.params.qd0 + X @ self.gv

    def node_positions(self, xi):
        X = np.asarray(xi).reshape(self.n, self.N)
        return self.q_free + (self.sx * X) @ self.Lq.T

    def Pmul(self, xi):
        return (np.asarray(xi).reshape(self.n, self.N) @ self.P_blk.T).ravel()

    def objective(self, xi):
        """Normalized cost (without the constant term)."""
        return float(0.5 * xi @ self.Pmul(xi) + self.c @ xi)

    def trajectories(self, qdd):
        """Explicit Euler recursion; returns q, qd of shape (n, N+1)."""
        qdd = np.asarray(qdd, float).reshape(self.n, self.N)
        dt = self.params.dt
        q = np.empty((self.n, self.N + 1))
        qd = np.empty((self.n, self.N + 1))
        q[:, 0] = self.params.q0
        qd[:, 0] = self.params.qd0
        for k in range(self.N):
            q[:, k + 1] = q[:, k] + dt * qd[:, k]
            qd[:, k + 1] = qd[:, k] + dt * qdd[:, k]
        return q, qd

    def cost(self, qdd, qd=None) -> float:
        """Physical cost; the acceleration at node N is zero."""
        qdd = np.asarray(qdd, float).reshape(self.n, self.N)
        if qd is None:
            _, qd = self.trajectories(qdd)
        p = self.params
        return float(p.w_a * np.sum(qdd * qdd) + p.w_v * np.sum(qd * qd))

    def terminal_eval(self, qf, qdf):
        """Raw residual vectors and their Jacobians with respect to (q_f, qd_f)."""
        arm = self.arm
        p, nrm, J, Jn = am.kinematics(arm, qf)
        H = am.velocity_partials(arm, qf, qdf)
        t = self.terminal
        r = (p - t.p_des, J @ qdf - t.v_des, nrm - t.o_des)
        return r, J, Jn, H

    def residual_norms(self, qf, qdf):
        r, *_ = self.terminal_eval(qf, qdf)
        return tuple(float(np.linalg.norm(v)) for v in r)

    def to_dict(self):
        return {"arm": self.arm.to_dict(), "params": self.params.to_dict(), "terminal": self.terminal.to_dict()}

    @classmethod
    def from_dict(cls, d):
        arm = am.ArmParams.from_dict(d["arm"])
        params = OcpParams(**d["params"])
        return cls(arm, params, TerminalSpec(**d["terminal"]))


def build(arm: am.ArmParams, params: OcpParams, terminal: TerminalSpec) -> OcpProblem:
    return OcpProblem(arm, params, terminal)


# -- SQP ------------------------------------------------------------------------

class _Reduced:
    """Exact elimination of the accelerations for a fixed set of linear rows.

    Rows are the terminal state (q_f, qd_f) followed by joint-limit rows
    ``q_j[m]``.  For given row values ``w`` the cost-minimizing accelerations
    are affine in ``w`` and the cost is a quadratic form in ``w``.
    """

    def __init__(self, prob: OcpProblem, active):
        n, N = prob.n, prob.N
        self.prob = prob
        self.active = list(active)
        rows = [(j, "q", N) for j in range(n)] + [(j, "v", N) for j in range(n)]
        rows += [(j, "q", m) for j, m in self.active]
        d = len(rows)
        self.d = d
        Gv = np.zeros((d, N))
        joint = np.empty(d, dtype=int)
        const = np.empty(d)
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        arm = prob.arm
        for r, (j, kind, m) in enumerate(rows):
            joint[r] = j
            if kind == "v":
                Gv[r] = prob.gv
                const[r] = prob.params.qd0[j]
            else:
                Gv[r] = prob.sx * prob.Lq[m]
                const[r] = prob.q_free[j, m]
                lo[r] = arm.q_min[j] + BOX_TIGHTEN
                hi[r] = arm.q_max[j] - BOX_TIGHTEN
        self.Gv, self.joint, self.const, self.lo, self.hi = Gv, joint, const, lo, hi
        Pinv = prob.Pinv_blk
        S = np.zeros((d, d))
        for j in range(n):
            idx = np.flatnonzero(joint == j)
            Gj = Gv[idx]
            S[np.ix_(idx, idx)] = Gj @ Pinv @ Gj.T
        self.Q = np.linalg.inv(S)
        self.Q = 0.5 * (self.Q + self.Q.T)
        X_free = prob.x_free.reshape(n, N)
        self.w_free = const + np.einsum("rk,rk->r", Gv, X_free[joint])
        # x(w) = x_free + Map (w - w_free); Map = P^-1 G' Q
        PG = np.zeros((n, N, d))
        for r in range(d):
            PG[joint[r], :, r] = Pinv @ Gv[r]
        self.Map = PG.reshape(n * N, d) @ self.Q

    def w_of(self, xi):
        X = np.asarray(xi).reshape(self.prob.n, self.prob.N)
        return self.const + np.einsum("rk,rk->r", self.Gv, X[self.joint])

    def x_of(self, w):
        return self.prob.x_free + self.Map @ (w - self.w_free)

    def cost(self, w):
        e = w - self.w_free
        return 0.5 * float(e @ self.Q @ e)


def _scaled_terms(prob: OcpProblem, qf, qdf):
    """Scaled residuals r_i/sqrt(eps_i) and Jacobian (3*groups, 2n) in (q_f, qd_f)."""
    r, J, Jn, H = prob.terminal_eval(qf, qdf)
    n = prob.n
    zero = np.zeros((3, n))
    res, jac = [], []
    for i, (Bq, Bv) in enumerate(((J, zero), (H, J), (Jn, zero))):
        if math.isfinite(prob.eps[i]):
            se = math.sqrt(prob.eps[i])
            res.append(r[i] / se)
            jac.append(np.hstack([Bq, Bv]) / se)
    if not res:
        return np.zeros(0), np.zeros((0, 2 * n)), r
    return np.concatenate(res), np.vstack(jac), r


def _lagrangian_curvature(prob: OcpProblem, qf, qdf, y, h=1e-6):
    """Central-difference Hessian of y' rhat(q_f, qd_f), symmetrized."""
    ys = [np.zeros(3), np.zeros(3), np.zeros(3)]
    j = 0
    for i in range(3):
        if math.isfinite(prob.eps[i]):
            ys[i] = np.asarray(y[3 * j:3 * j + 3], float) / math.sqrt(prob.eps[i])
            j += 1
    return K.terminal_curvature(np.asarray(qf, float), np.asarray(qdf, float), ys[0], ys[1], ys[2], h,
                                *prob.arm.kin_args())


def _convexify(Q, L, A, rhat, y, n, floor):
    """Positive definite model Hessian from the reduced cost Q and curvature L.

    Try Q + L, then add gamma * a a' along the normals of balls that carry a
    multiplier (curvature along the constraint tangents is left alone), and
    finally fall back to Q + psd(L), which keeps the exact cost block.
    """
    H = Q + L
    H = 0.5 * (H + H.T)
    if np.linalg.eigvalsh(H)[0] >= floor:
        return H
    normals = []
    for b in range(len(rhat) // 3):
        rb = rhat[3 * b:3 * b + 3]
        yb = y[3 * b:3 * b + 3]
        nr = np.linalg.norm(rb)
        if nr > 0.5 * BALL_SHRINK and np.linalg.norm(yb) > 0:
            a = np.zeros(H.shape[0])
            a[:2 * n] = A[3 * b:3 * b + 3].T @ (rb / nr)
            normals.append(a)
    if normals:
        Na = np.array(normals)
        base = float(np.max(np.abs(np.diag(H))))
        scale = base / max(float(np.max(np.sum(Na * Na, axis=1))), 1e-300)
        for gamma in scale * 10.0 ** np.arange(-2, 7):
            Hg = H + gamma * (Na.T @ Na)
            if np.linalg.eigvalsh(Hg)[0] >= floor:
                return Hg
    return _psd(0.5 * (Q + Q.T) + _psd(L, 0.0), floor)


def _psd(H, floor):
    H = 0.5 * (H + H.T)
    lam, V = np.linalg.eigh(H)
    if lam[0] >= floor:
        return H
    lam = np.maximum(lam, floor)
    return (V * lam) @ V.T


def _node_violations(prob: OcpProblem, xi, margin=0.0):
    qn = prob.node_positions(xi)
    bad = (qn < prob.arm.q_min[:, None] + margin) | (qn > prob.arm.q_max[:, None] - margin)
    bad[:, :2] = False
    bad[:, -1] = False  # node N is a terminal row
    return {(int(j), int(m)) for j, m in np.argwhere(bad)}


def _limits_ok(prob: OcpProblem, xi):
    qn = prob.node_positions(xi)
    return bool(np.all(qn >= prob.arm.q_min[:, None]) and np.all(qn <= prob.arm.q_max[:, None]))


def _qp(H, g, C, centers, radii, mu, lo, hi, settings):
    res = admm_solve(H, g, C, centers, radii, mu, lo, hi, settings=settings)
    pol = polish(H, g, C, centers, radii, mu, lo, hi, res.x, res.y)
    res.polished = pol is not None
    if pol is not None:
        res.x, res.y = pol
    return res


def _merit(prob, red: _Reduced, w, mu):
    n = prob.n
    rhat, _, r = _scaled_terms(prob, w[:n], w[n:2 * n])
    viol = sum(max(0.0, float(np.linalg.norm(rb)) - BALL_SHRINK) for rb in rhat.reshape(-1, 3))
    box = float(np.sum(np.maximum(w - red.hi, 0.0) + np.maximum(red.lo - w, 0.0)))
    return red.cost(w) + mu * (viol + box), viol, r


def _box_rows(red: _Reduced, w):
    bounded = np.flatnonzero(np.isfinite(red.lo))
    Cb = np.zeros((len(bounded), red.d))
    Cb[np.arange(len(bounded)), bounded] = 1.0
    return Cb, red.lo[bounded] - w[bounded], red.hi[bounded] - w[bounded]


class _Subproblem:
    """One SQP model: Hessian, rows and a solver for the step."""

    def __init__(self, H, grad, C, solve_fn, model_viol, correction):
        self.H, self.grad, self.C = H, grad, C
        self.solve_fn = solve_fn
        self.model_viol = model_viol
        self.correction = correction  # (w + delta, delta) -> corrected QP result


def _ball_model(prob, red, w, rhat, A, Lc, y_ball, mu, settings):
    """Linearized residual balls with an exact penalty (robust far from feasibility)."""
    n, d = prob.n, red.d
    nb = len(rhat) // 3
    Aext = np.zeros((3 * nb, d))
    Aext[:, :2 * n] = A
    H = _convexify(red.Q, Lc, A, rhat, y_ball, n, 1e-9 * float(np.max(np.abs(np.diag(red.Q)))))
    grad = red.Q @ (w - red.w_free)
    Cb, lo, hi = _box_rows(red, w)
    C = np.vstack([Aext, Cb])
    radii = np.full(nb, BALL_SHRINK)

    def run(centers, mu_):
        return _qp(H, grad, C, centers, radii, mu_, lo, hi, settings)

    def model_viol(delta):
        D = (Aext @ delta).reshape(-1, 3) + rhat.reshape(-1, 3)
        return sum(max(0.0, float(np.linalg.norm(v)) - BALL_SHRINK) for v in D)

    def correction(wt, delta, mu_):
        rt, _, _ = _scaled_terms(prob, wt[:n], wt[n:2 * n])
        return run(-(rt - A @ delta[:2 * n]).reshape(-1, 3), mu_)

    sub = _Subproblem(H, grad, C, lambda mu_: run(-rhat.reshape(-1, 3), mu_), model_viol, correction)
    sub.nb = nb
    sub.Aext = Aext
    return sub


def _tangent_model(prob, red, w, rhat, A, Lc, y_ball, settings):
    """Linearized norm constraints ||rhat_b|| <= rho with their curvature.

    Used once the iterate is feasible.  The Hessian includes the curvature of
    the norm itself, so it is the exact Lagrangian Hessian and the step is a
    genuine Newton step on the active set.
    """
    n, d = prob.n, red.d
    R = rhat.reshape(-1, 3)
    Y = y_ball.reshape(-1, 3) if y_ball is not None and len(y_ball) == rhat.size else np.zeros_like(R)
    H = red.Q + Lc
    rows, norms, units, idx = [], [], [], []
    for b in range(len(R)):
        nr = float(np.linalg.norm(R[b]))
        if nr < 1e-9:
            continue
        u = R[b] / nr
        Ab = A[3 * b:3 * b + 3]
        a = np.zeros(d)
        a[:2 * n] = Ab.T @ u
        nu = float(np.linalg.norm(Y[b]))
        if nu > 0:
            P = np.eye(3) - np.outer(u, u)
            H[:2 * n, :2 * n] += (nu / nr) * (Ab.T @ P @ Ab)
        rows.append(a)
        norms.append(nr)
        units.append(u)
        idx.append(b)
    H = _psd(H, 1e-9 * float(np.max(np.abs(np.diag(red.Q)))))
    grad = red.Q @ (w - red.w_free)
    Cb, lo_b, hi_b = _box_rows(red, w)
    Ah = np.array(rows).reshape(-1, d)
    C = np.vstack([Ah, Cb])
    k = len(rows)
    norms = np.array(norms)
    empty_c = np.zeros((0, 3))
    empty_r = np.zeros(0)

    def run(slack):
        lo = np.concatenate([np.full(k, -np.inf), lo_b])
        hi = np.concatenate([slack, hi_b])
        return _qp(H, grad, C, empty_c, empty_r, 0.0, lo, hi, settings)

    def model_viol(delta):
        return float(np.sum(np.maximum(norms + Ah @ delta - BALL_SHRINK, 0.0)))

    def correction(wt, delta, mu_):
        rt, _, _ = _scaled_terms(prob, wt[:n], wt[n:2 * n])
        Rt = rt.reshape(-1, 3)
        nt = np.array([np.linalg.norm(Rt[b]) for b in idx])
        return run(BALL_SHRINK - nt + Ah @ delta)

    sub = _Subproblem(H, grad, C, lambda mu_: run(BALL_SHRINK - norms), model_viol, correction)
    sub.k = k
    sub.idx = idx
    sub.units = units
    sub.nb = len(R)
    return sub


def kinematic_seed(problem: OcpProblem) -> OcpSolution:
    """Initial guess from the kinematic solver: reach (p_des, o_des), then
    the least-norm joint velocity for v_des, with the cheapest accelerations
    that end in that terminal state.  Joint limits at interior nodes are not
    enforced here; the SQP adds them as needed."""
    prob = problem
    arm, t, n = prob.arm, prob.terminal, prob.n
    guesses = [prob.params.q0] + _seed_list(arm)
    ik = ik_solve(arm, t.p_des, t.o_des, guesses)
    qf = ik.q
    qdf = np.linalg.pinv(am.jacobian(arm, qf)) @ t.v_des
    red = _Reduced(prob, ())
    xi = red.x_of(np.concatenate([qf, qdf]))
    qdd = prob.to_qdd(xi)
    q, qd = prob.trajectories(qdd)
    return OcpSolution(q=q, qd=qd, qdd=qdd, converged=False, iterations=0, solve_time=0.0,
                       residuals=prob.residual_norms(q[:, -1], qd[:, -1]), cost=prob.cost(qdd, qd),
                       status="seed", dt=prob.params.dt)


def transfer_solution(problem: OcpProblem, prev: OcpSolution) -> OcpSolution:
    """Carry ``prev`` onto a problem with a different initial state or node
    spacing: same terminal state and multipliers, accelerations re-derived for
    the new grid.  Joint-limit rows are dropped (their node indices refer to
    the old grid) and rediscovered by the solver."""
    prob = problem
    w = np.concatenate([prev.q[:, -1], prev.qd[:, -1]])
    xi = _Reduced(prob, ()).x_of(w)
    qdd = prob.to_qdd(xi)
    q, qd = prob.trajectories(qdd)
    return OcpSolution(q=q, qd=qd, qdd=qdd, converged=False, iterations=0, solve_time=0.0,
                       residuals=prob.residual_norms(q[:, -1], qd[:, -1]), cost=prob.cost(qdd, qd),
                       status="transferred", dt=prob.params.dt, mu=prev.mu, active=(),
                       y=None if prev.y is None else prev.y.copy())


def _seed_list(arm):
    from .arm_model import _default_ik_seeds

    return _default_ik_seeds(arm)


def solve(problem: OcpProblem, warm_start: OcpSolution | None = None,
          settings: AdmmSettings | None = None, max_iter: int | None = None,
          init: str = "kinematic") -> OcpSolution:
    """SQP over the terminal state with ADMM subproblems and an l1 merit.

    While any terminal residual is outside its tolerance the subproblem keeps
    the linearized residual balls under an exact penalty; once the iterate is
    feasible it switches to linearized norm constraints with their exact
    curvature, which converges quadratically.

    Converged when every terminal residual is inside its tolerance, every
    node is inside the joint limits, and either the SQP step (in scaled
    accelerations) or the stationarity residual is below ``params.tol``.
    On convergence the current iterate is returned, so re-solving from a
    converged warm start reproduces it.

    Without a warm start the iteration starts from ``init``: ``"rest"`` is
    the origin of the condensed space (zero accelerations), ``"kinematic"``
    is :func:`kinematic_seed`.  Both count as cold solves.
    """
    t0 = time.perf_counter()
    prob = problem
    par = prob.params
    n = prob.n
    settings = settings or AdmmSettings()
    if init not in ("rest", "kinematic"):
        raise InvalidParameters(f"unknown init {init!r}")
    warm = warm_start is not None and warm_start.qdd.shape == (n, prob.N)
    if max_iter is None:
        max_iter = par.max_iter_warm if warm else par.max_iter_cold
    n_ball = sum(math.isfinite(e) for e in prob.eps)
    seeded = not warm and init == "kinematic"
    if warm:
        xi = prob.to_xi(warm_start.qdd)
        mu = float(warm_start.mu)
        active = set(warm_start.active)
        y_ball = warm_start.y
    elif seeded:
        xi = prob.to_xi(kinematic_seed(prob).qdd)
        mu = MU0
        active = set()
        y_ball = None
    else:
        xi = np.zeros(prob.nx)
        mu = MU0
        active = set()
        y_ball = None
    if y_ball is None or len(y_ball) != 3 * n_ball:
        y_ball = np.zeros(3 * n_ball)
    active |= _node_violations(prob, xi, 0.02)
    red = _Reduced(prob, sorted(active))
    w = red.w_of(xi)
    x_cur = red.x_of(w) if (warm or seeded) else xi
    converged = False
    status = "max-iter"
    admm_total = 0
    it = 0
    best_viol, best_it = math.inf, 0
    for it in range(1, max_iter + 1):
        qf, qdf = w[:n], w[n:2 * n]
        rhat, A, r = _scaled_terms(prob, qf, qdf)
        rn = [float(np.linalg.norm(v)) for v in r]
        res_ok = all(rn[i] ** 2 <= prob.eps[i] for i in range(3))
        if not res_ok:
            viol = sum(max(rn[i] / math.sqrt(prob.eps[i]) - 1.0, 0.0) for i in range(3))
            if viol < (1.0 - STALL_GAIN) * best_viol:
                best_viol, best_it = viol, it
            elif it - best_it >= STALL_WINDOW:
                status = "stalled"
                break
        feasible = res_ok and _limits_ok(prob, x_cur)
        Lc = np.zeros_like(red.Q)
        if np.any(y_ball):
            Lc[:2 * n, :2 * n] = _lagrangian_curvature(prob, qf, qdf, y_ball)
        res = None
        if res_ok:
            sub = _tangent_model(prob, red, w, rhat, A, Lc, y_ball, settings)
            res = sub.solve_fn(mu)
            admm_total += res.iterations
            if not (res.converged or res.polished):
                res = None
            else:
                y_new = np.zeros(3 * n_ball)
                for j, b in enumerate(sub.idx):
                    y_new[3 * b:3 * b + 3] = max(float(res.y[j]), 0.0) * sub.units[j]
        if res is None:
            sub = _ball_model(prob, red, w, rhat, A, Lc, y_ball, mu, settings)
            res = sub.solve_fn(mu)
            admm_total += res.iterations
            # steering: raise the penalty only while that buys a real
            # reduction of the linearized violation (the normal ball can be
            # unreachable in the linear model, and then a larger mu only
            # inflates the step)
            for _inner in range(8):
                if not n_ball or mu >= MU_MAX:
                    break
                Y = res.y[: 3 * n_ball].reshape(-1, 3)
                Dz = (sub.Aext @ res.x).reshape(-1, 3) + rhat.reshape(-1, 3)
                outside = np.linalg.norm(Dz, axis=1) > BALL_SHRINK + 1e-4
                if not np.any(outside & (np.linalg.norm(Y, axis=1) >= 0.999 * mu)):
                    break
                trial = sub.solve_fn(min(10.0 * mu, MU_MAX))
                admm_total += trial.iterations
                v_now, v_try = sub.model_viol(res.x), sub.model_viol(trial.x)
                if v_try > v_now - 0.1 * v_now:
                    break
                mu = min(10.0 * mu, MU_MAX)
                res = trial
            y_new = res.y[: 3 * n_ball].copy()
        delta = res.x
        grad = sub.grad
        step = float(np.linalg.norm(red.Map @ delta))
        kkt_vec = grad + sub.C.T @ res.y
        kkt = float(np.max(np.abs(kkt_vec))) / (1.0 + float(np.max(np.abs(grad))))
        if feasible and (step <= par.tol * (1.0 + float(np.linalg.norm(x_cur))) or kkt <= par.tol):
            converged = True
            status = "converged"
            break
        y_ball = y_new
        if n_ball:
            ymax = float(np.max(np.linalg.norm(y_ball.reshape(-1, 3), axis=1)))
            mu = min(MU_MAX, max(MU0, min(mu, 10.0 * ymax), 2.0 * ymax))
        # l1 merit line search with one second-order correction
        phi0, v0, _ = _merit(prob, red, w, mu)
        pred = -(float(grad @ delta) + 0.5 * float(delta @ sub.H @ delta)) + mu * (v0 - sub.model_viol(delta))
        pred = max(pred, 0.0)
        phi1, _, _ = _merit(prob, red, w + delta, mu)
        alpha = 1.0
        if phi1 > phi0 - 1e-4 * pred and n_ball:
            soc = sub.correction(w + delta, delta, mu)
            admm_total += soc.iterations
            phi_s, _, _ = _merit(prob, red, w + soc.x, mu)
            if phi_s <= phi0 - 1e-4 * pred:
                delta = soc.x
                phi1 = phi_s
        while phi1 > phi0 - 1e-4 * alpha * pred and alpha > 1e-6:
            alpha *= 0.5
            phi1, _, _ = _merit(prob, red, w + alpha * delta, mu)
        w = w + alpha * delta
        x_cur = red.x_of(w)
        new_rows = _node_violations(prob, x_cur) - active
        if new_rows:
            active |= new_rows
            red = _Reduced(prob, sorted(active))
            w = red.w_of(x_cur)
            x_cur = red.x_of(w)
    qdd = prob.to_qdd(x_cur)
    q, qd = prob.trajectories(qdd)
    rn = prob.residual_norms(q[:, -1], qd[:, -1])
    if converged and not (all(rn[i] ** 2 <= prob.eps[i] for i in range(3)) and _limits_ok(prob, x_cur)):
        converged = False
        status = "verify-failed"
    return OcpSolution(
        q=q, qd=qd, qdd=qdd, converged=converged, iterations=it,
        solve_time=time.perf_counter() - t0, residuals=rn, cost=prob.cost(qdd, qd),
        status=status, dt=par.dt, admm_iterations=admm_total, warm_started=warm,
        mu=mu, active=tuple(sorted(active)), y=y_ball,
    )


def solution_from_dict(d) -> OcpSolution:
    return OcpSolution(
        q=np.array(d["q"]), qd=np.array(d["qd"]), qdd=np.array(d["qdd"]),
        converged=d["converged"], iterations=d["iterations"], solve_time=d["solve_time"],
        residuals=tuple(d["residuals"]), cost=d["cost"], status=d.get("status", ""), dt=d.get("dt", 0.0),
    )


def dump_json(problem: OcpProblem, solution: OcpSolution | None = None) -> str:
    out = {"problem": problem.to_dict()}
    if solution is not None:
        out["solution"] = solution.to_dict()
    return json.dumps(out)


def load_json(text: str):
    d = json.loads(text)
    prob = OcpProblem.from_dict(d["problem"])
    sol = solution_from_dict(d["solution"]) if "solution" in d else None
    return prob, sol


# -- kinematic solver for the workspace sweep ------------------------------------

@dataclass
class IkResult:
    q: np.ndarray
    success: bool
    pos_err: float
    orient_err_deg: float
    iterations: int


def _dls(A, e, lam):
    m = A.shape[0]
    return A.T @ np.linalg.solve(A @ A.T + lam * lam * np.eye(m), e)


def ik_solve(arm: am.ArmParams, p_target, n_target, q_guess, max_iter: int = 200,
             pos_tol: float = 1e-4, damping: float = 1e-3) -> IkResult:
    """Damped least squares with the normal handled in the position null space.

    ``q_guess`` may be a single configuration or a list of seeds; the best
    result is returned (successful position first, then smallest normal
    error).  Joint limits are enforced by clamping after every step.
    """
    p_t = np.asarray(p_target, float)
    n_t = np.asarray(n_target, float)
    n_t = n_t / np.linalg.norm(n_t)
    guesses = [q_guess] if np.ndim(q_guess) == 1 else list(q_guess)
    best = None
    for g in guesses:
        res = _ik_single(arm, p_t, n_t, np.array(g, float), max_iter, pos_tol, damping)
        if best is None or (res.success, -res.orient_err_deg, -res.pos_err) > (best.success, -best.orient_err_deg, -best.pos_err):
            best = res
        if best.success and best.orient_err_deg < 1e-6:
            break
    return best


def _ik_single(arm, p_t, n_t, q, max_iter, pos_tol, lam):
    q = np.clip(q, arm.q_min, arm.q_max)
    n_j = arm.n_joints
    I = np.eye(n_j)
    it = 0
    best_pe = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        p, nrm, J, Jn = am.kinematics(arm, q)
        e_p = p_t - p
        pe = np.linalg.norm(e_p)
        # give up on points that stay out of reach
        if pe < best_pe * (1 - 1e-3):
            best_pe, stalled = pe, 0
        elif pe > pos_tol:
            stalled += 1
            if stalled >= 25:
                break
        e_n = n_t - nrm
        if np.linalg.norm(e_p) < 1e-12 and np.linalg.norm(e_n) < 1e-12:
            break
        dq1 = _dls(J, e_p, lam)
        Jpinv = np.linalg.pinv(J, rcond=1e-6)
        Nul = I - Jpinv @ J
        A2 = Jn @ Nul
        dq2 = _dls(A2, e_n - Jn @ dq1, 0.05)
        dq = dq1 + Nul @ dq2
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q_new = np.clip(q + dq, arm.q_min, arm.q_max)
        if np.linalg.norm(q_new - q) < 1e-13:
            q = q_new
            break
        q = q_new
    p, nrm = am.paddle_pose(arm, q)
    pe = float(np.linalg.norm(p_t - p))
    ang = math.degrees(math.acos(min(1.0, max(-1.0, float(nrm @ n_t)))))
    return IkResult(q, pe <= pos_tol, pe, ang, it)
