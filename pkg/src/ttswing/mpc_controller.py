"""Replanning swing controller: fixed- and shrinking-horizon variants.

A plan always covers the whole swing on a 2 ms grid of ``N_i + 1`` nodes
ending at the predicted strike time.  The executor maps the clock to a node
index and sends that node as the setpoint; new solutions are blended into the
running plan in node space with a quintic S-curve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import arm_model as am
from . import swing_ocp as so
from .ball_prediction import StrikePrediction
from .collision_model import SwingSpec, spec_to_terminal
from .errors import InfeasibleProblem, InvalidParameters

MODES = ("FH", "SH")


@dataclass(frozen=True)
class MpcConfig:
    mode: str = "FH"
    T_swing: float = 0.5
    blend_duration: float = 0.020
    S_max: int = 3
    interp_dt: float = 0.002
    warm_start: bool = True
    cold_init: str = "kinematic"  # solver start when there is no warm start
    # SH warm start: "reuse" passes the previous accelerations unchanged (their
    # meaning shifts with the shorter node spacing); "transfer" re-derives
    # them so the previous terminal state is kept exactly
    sh_warm: str = "reuse"
    ocp: so.OcpParams | None = None  # template; q0, qd0 and dt are filled per solve

    def __post_init__(self):
        mode = str(self.mode).upper()
        if mode not in MODES:
            raise InvalidParameters(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not self.T_swing > 0 or not self.interp_dt > 0:
            raise InvalidParameters("T_swing and interp_dt must be positive")
        if abs(self.T_swing / self.interp_dt - round(self.T_swing / self.interp_dt)) > 1e-9:
            raise InvalidParameters("T_swing must be a whole number of interp_dt steps")
        if self.blend_duration < self.interp_dt:
            raise InvalidParameters("blend_duration must be >= interp_dt")
        if int(self.S_max) != self.S_max or self.S_max < 1:
            raise InvalidParameters("S_max must be an integer >= 1")
        if self.cold_init not in ("kinematic", "rest"):
            raise InvalidParameters(f"cold_init must be 'kinematic' or 'rest', got {self.cold_init!r}")
        if self.sh_warm not in ("reuse", "transfer"):
            raise InvalidParameters(f"sh_warm must be 'reuse' or 'transfer', got {self.sh_warm!r}")
        if self.ocp is None:
            object.__setattr__(self, "ocp", so.OcpParams(np.zeros(5), np.zeros(5), dt=self.T_swing / 50))

    @property
    def N_i(self) -> int:
        return int(round(self.T_swing / self.interp_dt))

    @property
    def N(self) -> int:
        return self.ocp.N

    @property
    def blend_nodes(self) -> int:
        return int(round(self.blend_duration / self.interp_dt))

    def ocp_params(self, q0, qd0, dt) -> so.OcpParams:
        return self.ocp.with_initial(q0, qd0, dt)


@dataclass
class PlannedTrajectory:
    q: np.ndarray  # (N_i + 1, n)
    qd: np.ndarray
    qdd: np.ndarray  # mean acceleration over the interval that follows each node
    t_strike: float
    interp_dt: float
    source: int = 0
    blend_clipped: bool = False

    @property
    def n_nodes(self) -> int:
        return self.q.shape[0]

    @property
    def t_start(self) -> float:
        return self.t_strike - (self.n_nodes - 1) * self.interp_dt

    def times(self) -> np.ndarray:
        return self.t_strike - (self.n_nodes - 1 - np.arange(self.n_nodes)) * self.interp_dt

    def node(self, i: int):
        return self.q[i], self.qd[i], self.qdd[i]

    def index_at(self, t: float) -> int:
        k = math.floor((t - self.t_start) / self.interp_dt + 0.5)
        return min(max(k, 0), self.n_nodes - 1)


def hold_plan(state: am.JointState, t_strike: float, cfg: MpcConfig, source: int = 0) -> PlannedTrajectory:
    """Plan that stays at ``state`` (used until the first solve succeeds)."""
    m = cfg.N_i + 1
    q = np.tile(state.q, (m, 1))
    return PlannedTrajectory(q, np.zeros_like(q), np.zeros_like(q), t_strike, cfg.interp_dt, source)


def interpolate(sol: so.OcpSolution, t0: float, t_strike: float, cfg: MpcConfig,
                base: PlannedTrajectory | None = None, source: int = 0) -> PlannedTrajectory:
    """Cubic spline through the solution's nodes (end slopes clamped to qd),
    sampled on the plan grid.  Grid nodes earlier than ``t0`` are copied from
    ``base`` (or held at the initial state)."""
    N = sol.q.shape[1] - 1
    ts = t0 + sol.dt * np.arange(N + 1)
    ts[-1] = t_strike
    sp = CubicSpline(ts, sol.q.T, bc_type=((1, sol.qd[:, 0]), (1, sol.qd[:, -1])))
    h = cfg.interp_dt
    m = cfg.N_i + 1
    tk = t_strike - (m - 1 - np.arange(m)) * h
    live = tk >= t0 - 1e-9
    n = sol.q.shape[0]
    q = np.empty((m, n))
    qd = np.empty((m, n))
    qdd = np.empty((m, n))
    tl = np.clip(tk[live], t0, t_strike)
    q[live] = sp(tl)
    qd[live] = sp(tl, 1)
    nxt = np.minimum(tl + h, t_strike)
    qdd[live] = (sp(nxt, 1) - qd[live]) / h
    qdd[-1] = sp(t_strike, 2)
    dead = ~live
    if np.any(dead):
        if base is not None:
            q[dead], qd[dead], qdd[dead] = base.q[dead], base.qd[dead], base.qdd[dead]
        else:
            q[dead], qd[dead], qdd[dead] = sol.q[:, 0], 0.0, 0.0
    return PlannedTrajectory(q, qd, qdd, t_strike, h, source)


def smoothstep(u):
    """Quintic S-curve and its first two derivatives with respect to ``u``."""
    u = np.clip(np.asarray(u, float), 0.0, 1.0)
    s = u**3 * (10 - 15 * u + 6 * u * u)
    ds = 30 * u * u * (1 - u) ** 2
    dds = 60 * u * (1 - u) * (1 - 2 * u)
    return s, ds, dds


def blend(old: PlannedTrajectory, new: PlannedTrajectory, t_switch: float, cfg: MpcConfig) -> PlannedTrajectory:
    """Blend in node space: nodes before the switch come from ``old``, the
    next ``blend_duration`` ramps from ``old`` to ``new``, the rest is
    ``new``.  Node ``k`` of both plans is the setpoint the executor sends for
    index ``k``, so the two are aligned by index, not by clock time."""
    if old.q.shape != new.q.shape:
        raise InvalidParameters("plans must have the same grid")
    h = cfg.interp_dt
    m = new.n_nodes
    k0 = new.index_at(t_switch)
    k = np.arange(m)
    u = (k - k0) * h / cfg.blend_duration
    s, ds, dds = smoothstep(u)
    ds = ds / cfg.blend_duration
    dds = dds / cfg.blend_duration**2
    dq, dqd, dqdd = new.q - old.q, new.qd - old.qd, new.qdd - old.qdd
    c = s[:, None]
    q = old.q + c * dq
    qd = old.qd + c * dqd + ds[:, None] * dq
    qdd = old.qdd + c * dqdd + 2 * ds[:, None] * dqd + dds[:, None] * dq
    # outside the window copy the plans exactly; inside, store interval means
    # like every other plan so the held acceleration integrates to the next qd
    win = np.flatnonzero((u > 0) & (u < 1))
    pre, post = u <= 0, u >= 1
    for a, o, n in ((q, old.q, new.q), (qd, old.qd, new.qd), (qdd, old.qdd, new.qdd)):
        a[pre], a[post] = o[pre], n[post]
    lo = max(k0, 0)
    mean = win[win < m - 1]
    if lo < m - 1:
        mean = np.union1d(mean, [lo])
    qdd[mean] = (qd[mean + 1] - qd[mean]) / h
    out = PlannedTrajectory(q, qd, qdd, new.t_strike, h, new.source)
    # a window that runs past the strike node is cut there
    out.blend_clipped = k0 + cfg.blend_nodes > m - 1
    return out


def select_index(t: float, t_strike: float, cfg: MpcConfig, i_prev: int) -> int:
    """Node to execute at clock time ``t``.

    The raw index tracks the remaining time; forward jumps are capped at
    ``S_max`` nodes past the last executed node and the index never moves
    backwards (a late plan slows down by holding its node)."""
    raw = (1.0 - (t_strike - t) / cfg.T_swing) * cfg.N_i
    i = math.floor(raw + 0.5)
    i = min(max(i, 0), i_prev + cfg.S_max)
    return int(min(max(i, i_prev), cfg.N_i))


@dataclass
class ReplanResult:
    plan: PlannedTrajectory | None
    solution: so.OcpSolution | None
    status: str  # converged | failed | infeasible | hold


def replan(arm: am.ArmParams, t: float, current: am.JointState, ready: am.JointState,
           prediction: StrikePrediction, spec: SwingSpec, prev: so.OcpSolution | None,
           cfg: MpcConfig, base: PlannedTrajectory | None = None, source: int = 0,
           strike_rotation=None) -> ReplanResult:
    """One planning step for the prediction available at time ``t``.

    FH solves from the ready state with the fixed node spacing; SH solves from
    ``current`` over the remaining time once the swing is under way (before
    that, it is identical to FH).  Non-converged solves return no plan.
    """
    if not prediction.valid:
        raise InvalidParameters("prediction is not valid")
    t_strike = float(prediction.t_strike)
    remaining = t_strike - t
    if remaining < 2 * cfg.interp_dt:
        return ReplanResult(None, None, "hold")
    v_des, o_des = spec_to_terminal(spec, strike_rotation)
    terminal = so.TerminalSpec(prediction.p_des, v_des, o_des)
    shrinking = cfg.mode == "SH" and remaining < cfg.T_swing
    if shrinking:
        params = cfg.ocp_params(current.q, current.qd, remaining / cfg.N)
        t0 = t
    else:
        params = cfg.ocp_params(ready.q, ready.qd, cfg.T_swing / cfg.N)
        t0 = t_strike - cfg.T_swing
    try:
        prob = so.build(arm, params, terminal)
    except InfeasibleProblem:
        return ReplanResult(None, None, "infeasible")
    warm = None
    if cfg.warm_start and prev is not None:
        same_grid = np.array_equal(prev.q[:, 0], params.q0) and np.array_equal(prev.qd[:, 0], params.qd0) \
            and prev.dt == params.dt
        warm = so.transfer_solution(prob, prev) if (not same_grid and cfg.sh_warm == "transfer") else prev
    sol = so.solve(prob, warm_start=warm, init=cfg.cold_init)
    if not sol.converged:
        return ReplanResult(None, sol, "failed")
    plan = interpolate(sol, t0, t_strike, cfg, base=base, source=source)
    return ReplanResult(plan, sol, "converged")


@dataclass
class SolveRecord:
    t: float
    solve_ms: float
    converged: bool
    iterations: int
    status: str
    p_des: np.ndarray
    t_strike: float
    i_star: int


class MpcController:
    """Planner plus executor for one arm.

    In simulation the planner runs synchronously: :meth:`on_prediction`
    swaps the plan at a tick boundary and :meth:`setpoint` emits the node for
    the current tick.
    """

    def __init__(self, arm: am.ArmParams, ready: am.JointState, spec: SwingSpec, cfg: MpcConfig,
                 strike_rotation=None):
        self.arm = arm
        self.ready = ready
        self.spec = spec
        self.cfg = cfg
        self.strike_rotation = strike_rotation
        self.plan: PlannedTrajectory | None = None
        self.solution: so.OcpSolution | None = None
        self.i_prev = 0
        self.records: list[SolveRecord] = []
        self._n_plans = 0

    def on_prediction(self, t: float, prediction: StrikePrediction, current: am.JointState) -> SolveRecord | None:
        if not prediction.valid:
            return None
        res = replan(self.arm, t, current, self.ready, prediction, self.spec, self.solution, self.cfg,
                     base=self.plan, source=self._n_plans + 1, strike_rotation=self.strike_rotation)
        if res.status == "hold":
            return None
        sol = res.solution
        rec = SolveRecord(t, 1e3 * sol.solve_time if sol else 0.0, res.status == "converged",
                          sol.iterations if sol else 0, res.status, np.array(prediction.p_des, float),
                          float(prediction.t_strike), self.i_prev)
        self.records.append(rec)
        if res.plan is not None:
            self._n_plans += 1
            self.solution = sol
            if self.plan is None:
                self.plan = res.plan
            else:
                # carry the old plan onto the new strike time before blending
                old = replace(self.plan, t_strike=res.plan.t_strike)
                self.plan = blend(old, res.plan, res.plan.times()[self.i_prev], self.cfg)
        elif self.plan is None:
            self.plan = hold_plan(self.ready, float(prediction.t_strike), self.cfg)
        return rec

    def setpoint(self, t: float):
        if self.plan is None:
            return self.ready.q, self.ready.qd, np.zeros_like(self.ready.q)
        i = select_index(t, self.plan.t_strike, self.cfg, self.i_prev)
        self.i_prev = i
        return self.plan.node(i)

    @property
    def convergence_ratio(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.converged for r in self.records) / len(self.records)


@dataclass
class MpcRun:
    records: list
    t: np.ndarray
    setpoints: np.ndarray  # (ticks, 3, n)
    i_star: np.ndarray
    log: object = None  # plant ExecutionLog when a plant was simulated
    strike: object = None

    @property
    def attempts(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> int:
        return sum(r.converged for r in self.records)


def simulate_mpc(arm: am.ArmParams, ready: am.JointState, spec: SwingSpec, stream, cfg: MpcConfig,
                 t_end: float, t0: float = 0.0, loop=None, t_event: float | None = None,
                 strike_rotation=None) -> MpcRun:
    """Run the replan loop against a prediction stream.

    ``stream`` is a sequence of ``(t_available, StrikePrediction)`` in time
    order; each entry triggers a replan at the first tick at or after its
    availability.  With ``loop`` (a :class:`plant_sim.ClosedLoop`) the
    setpoints drive the simulated arm and SH plans from its measured state;
    without it the arm is assumed to track every setpoint exactly.
    """
    ctrl = MpcController(arm, ready, spec, cfg, strike_rotation)
    h = cfg.interp_dt
    n_ticks = int(round((t_end - t0) / h))
    stream = list(stream)
    j = 0
    current = ready
    ts, sps, idx = [], [], []
    snap = None
    for k in range(n_ticks + 1):
        t = t0 + k * h
        if loop is not None:
            current = loop.state.joint
        while j < len(stream) and stream[j][0] <= t + 1e-12:
            ctrl.on_prediction(t, stream[j][1], current)
            j += 1
        sp = ctrl.setpoint(t)
        ts.append(t)
        sps.append(np.array(sp))
        idx.append(ctrl.i_prev)
        if loop is not None:
            s = loop.tick(sp, t_event)
            if s is not None:
                snap = s
        else:
            current = am.JointState(sp[0], sp[1])
    return MpcRun(ctrl.records, np.array(ts), np.array(sps), np.array(idx),
                  loop.log if loop is not None else None, snap)


def write_solve_log(path, records, schema: str, timing: bool = False):
    """``t,solve_ms,converged,pdes_x,pdes_y,pdes_z,i_star``; ``solve_ms`` is
    left empty unless ``timing`` is set (wall time is not reproducible)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "solve_ms", "converged", "pdes_x", "pdes_y", "pdes_z", "i_star"])
        for r in records:
            w.writerow([repr(float(r.t)), f"{r.solve_ms:.3f}" if timing else "", int(r.converged),
                        *(repr(float(x)) for x in r.p_des), r.i_star])
