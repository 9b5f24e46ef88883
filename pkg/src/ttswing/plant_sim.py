"""Simulated arm plant and its joint-level controller.

The plant integrates ``M(q) qdd + C(q, qd) = tau_g(q) + u`` with RK4 under a
zero-order-hold torque.  The controller adds computed-torque feedforward
``u_ff = M(q) qdd_des + C(q, qd) - tau_g(q)`` to a joint PD law and saturates
the sum at the actuator limits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import arm_model as am
from .errors import InvalidParameters, ModelError

CONTROL_DT = 0.002
SUBSTEPS = 4


@dataclass(frozen=True)
class PdGains:
    Kp: np.ndarray = field(default_factory=lambda: np.full(5, 200.0))
    Kd: np.ndarray = field(default_factory=lambda: np.full(5, 5.0))
    torque_limits: np.ndarray = field(default_factory=lambda: np.array([34.0, 34.0, 34.0, 34.0, 3.0]))

    def __post_init__(self):
        for k in ("Kp", "Kd", "torque_limits"):
            object.__setattr__(self, k, np.array(getattr(self, k), dtype=float).reshape(-1))
        if np.any(self.Kp < 0) or np.any(self.Kd < 0):
            raise InvalidParameters("gains must be >= 0")
        if np.any(self.torque_limits <= 0):
            raise InvalidParameters("torque limits must be positive")
        if not len(self.Kp) == len(self.Kd) == len(self.torque_limits):
            raise InvalidParameters("gain vectors must have equal length")

    @staticmethod
    def zero(n: int = 5, limit: float = np.inf) -> "PdGains":
        return PdGains(np.zeros(n), np.zeros(n), np.full(n, limit))


@dataclass(frozen=True)
class PlantState:
    t: float
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", np.array(self.q, dtype=float))
        object.__setattr__(self, "qd", np.array(self.qd, dtype=float))

    @property
    def joint(self) -> am.JointState:
        return am.JointState(self.q, self.qd)


@dataclass
class Disturbance:
    """Additive joint-torque noise, drawn once per control tick."""

    torque_std: np.ndarray | float = 0.0
    rng: np.random.Generator | None = None

    def sample(self, n: int) -> np.ndarray:
        std = np.broadcast_to(np.asarray(self.torque_std, float), (n,))
        if self.rng is None or not np.any(std > 0):
            return np.zeros(n)
        return self.rng.normal(0.0, 1.0, n) * std


def feedforward(arm: am.ArmParams, q, qd, qdd_des) -> np.ndarray:
    """M(q) qdd_des + C(q, qd) - tau_g(q), evaluated in one inverse-dynamics pass."""
    return am.inverse_dynamics(arm, q, qd, qdd_des)


def control_torque(arm: am.ArmParams, state, setpoint, gains: PdGains):
    """Return ``(u, sat_mask)``; ``sat_mask`` flags joints clipped at their limit."""
    q_des, qd_des, qdd_des = (np.asarray(a, float) for a in setpoint)
    u = feedforward(arm, state.q, state.qd, qdd_des)
    u = u + gains.Kp * (q_des - state.q) + gains.Kd * (qd_des - state.qd)
    lim = gains.torque_limits
    sat = np.abs(u) > lim
    return np.clip(u, -lim, lim), sat


def step_plant(arm: am.ArmParams, state: PlantState, u, dt: float) -> PlantState:
    if not dt > 0:
        raise InvalidParameters("dt must be positive")
    u = np.ascontiguousarray(u, dtype=float)
    try:
        q, qd = K.rk4_plant(state.q, state.qd, u, dt, arm.gravity, *arm.dyn_args())
    except np.linalg.LinAlgError as exc:  # pragma: no cover - M is positive definite
        raise ModelError(f"mass matrix is singular at t={state.t}") from exc
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise ModelError(f"non-finite plant state at t={state.t + dt}")
    return PlantState(state.t + dt, q, qd)


def sat_bits(mask) -> int:
    return int(sum(1 << j for j, s in enumerate(mask) if s))


@dataclass
class StrikeSnapshot:
    t: float
    q: np.ndarray
    qd: np.ndarray
    p: np.ndarray
    v: np.ndarray
    n: np.ndarray

    @staticmethod
    def of(arm: am.ArmParams, state: PlantState) -> "StrikeSnapshot":
        p, n = am.paddle_pose(arm, state.q)
        v = am.paddle_velocity(arm, state.q, state.qd)
        return StrikeSnapshot(state.t, state.q.copy(), state.qd.copy(), p, v, n)

    def to_dict(self):
        return {"t": self.t, "q": self.q.tolist(), "qd": self.qd.tolist(), "p": self.p.tolist(),
                "v": self.v.tolist(), "n": self.n.tolist()}


@dataclass
class ExecutionLog:
    t: list = field(default_factory=list)
    q: list = field(default_factory=list)
    qd: list = field(default_factory=list)
    u: list = field(default_factory=list)
    sat: list = field(default_factory=list)
    q_des: list = field(default_factory=list)
    strike: StrikeSnapshot | None = None

    def record(self, state: PlantState, u, sat, q_des):
        self.t.append(state.t)
        self.q.append(state.q.copy())
        self.qd.append(state.qd.copy())
        self.u.append(np.array(u, float))
        self.sat.append(sat_bits(sat))
        self.q_des.append(np.array(q_des, float))

    @property
    def saturated(self) -> bool:
        return any(self.sat)

    def tracking_error(self) -> np.ndarray:
        """Per-tick max joint error against the setpoint that was commanded."""
        return np.max(np.abs(np.array(self.q) - np.array(self.q_des)), axis=1)

    def write_csv(self, path, schema: str):
        n = len(self.q[0]) if self.q else 5
        with open(path, "w", newline="") as fh:
            fh.write(f"# {schema}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"q{j + 1}" for j in range(n)] + [f"qd{j + 1}" for j in range(n)]
                       + [f"u{j + 1}" for j in range(n)] + ["sat_mask"])
            for t, q, qd, u, s in zip(self.t, self.q, self.qd, self.u, self.sat):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in np.concatenate([q, qd, u])] + [s])

    def write_strike_json(self, path):
        with open(path, "w") as fh:
            json.dump(None if self.strike is None else self.strike.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


class ClosedLoop:
    """One arm, one controller: call :meth:`tick` at the control rate.

    ``plant_arm`` is the simulated truth; ``model_arm`` is what the
    controller believes (they differ in mismatch studies).  Each tick holds
    the torque for ``substeps`` RK4 steps.
    """

    def __init__(self, plant_arm: am.ArmParams, model_arm: am.ArmParams, state: PlantState,
                 gains: PdGains | None = None, control_dt: float = CONTROL_DT, substeps: int = SUBSTEPS,
                 disturbance: Disturbance | None = None, log: bool = True):
        if substeps < 2:
            raise InvalidParameters("need at least two plant substeps per control tick")
        self.plant_arm = plant_arm
        self.model_arm = model_arm
        self.state = state
        self.gains = gains or PdGains()
        self.control_dt = control_dt
        self.substeps = int(substeps)
        self.disturbance = disturbance or Disturbance()
        self.log = ExecutionLog() if log else None
        self._u = np.zeros(len(state.q))

    def tick(self, setpoint, t_event: float | None = None):
        """Advance one control period.  If ``t_event`` falls inside it, the
        state at exactly that time is returned as a snapshot."""
        u, sat = control_torque(self.model_arm, self.state, setpoint, self.gains)
        u = u + self.disturbance.sample(len(u))
        self._u = u
        if self.log is not None:
            self.log.record(self.state, u, sat, setpoint[0])
        h = self.control_dt / self.substeps
        snap = None
        t_end = self.state.t + self.control_dt
        for _ in range(self.substeps):
            nxt = step_plant(self.plant_arm, self.state, u, h)
            if snap is None and t_event is not None and self.state.t <= t_event < nxt.t:
                part = t_event - self.state.t
                at = step_plant(self.plant_arm, self.state, u, part) if part > 0 else self.state
                snap = StrikeSnapshot.of(self.plant_arm, at)
            self.state = nxt
        # keep the tick grid free of accumulated rounding
        self.state = PlantState(t_end, self.state.q, self.state.qd)
        return snap


def run_closed_loop(plant_arm: am.ArmParams, setpoint_fn, state: PlantState, t_end: float,
                    gains: PdGains | None = None, model_arm: am.ArmParams | None = None,
                    t_strike: float | None = None, control_dt: float = CONTROL_DT,
                    substeps: int = SUBSTEPS, disturbance: Disturbance | None = None) -> ExecutionLog:
    """Track ``setpoint_fn(t, state) -> (q_des, qd_des, qdd_des)`` until ``t_end``.

    With ``t_strike`` the paddle state at that instant is stored in the log.
    """
    loop = ClosedLoop(plant_arm, model_arm or plant_arm, state, gains, control_dt, substeps, disturbance)
    n_ticks = int(round((t_end - state.t) / control_dt))
    for _ in range(n_ticks):
        snap = loop.tick(setpoint_fn(loop.state.t, loop.state), t_strike)
        if snap is not None:
            loop.log.strike = snap
    return loop.log
