"""Simulated launcher, end-to-end trials and the MPC benchmark.

Every random draw of trial ``i`` comes from ``default_rng([seed, i])``, so
aggregates are a pure function of (scenario, seed) and do not depend on the
order in which trials run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import arm_model as am
from .ball_dynamics import AeroParams, BallState, TableGeometry, integrate
from .ball_prediction import BallEstimator, StrikePrediction, observe_flight
from .collision_model import ContactParams, SwingSpec, exit_velocity, score_strike, spec_to_terminal, swing_type
from .errors import InvalidParameters, NoContact, TTSwingError
from .mpc_controller import MpcConfig, simulate_mpc
from .plant_sim import ClosedLoop, Disturbance, PdGains, PlantState

PADDLE_RADIUS = 0.075
SCHEMA = "ttswing-{kind} v1"


@dataclass(frozen=True)
class Launcher:
    """Launch box and speed range; the direction is aimed so the ball lands
    on ``aim`` (x, y on the table) and then jittered inside a cone."""

    center: tuple = (2.9, -0.40, -0.15)
    jitter: float = 0.05
    speed: tuple = (5.0, 6.0)
    aim: tuple = (0.8, -0.40)
    cone_deg: float = 5.0

    def __post_init__(self):
        if self.jitter < 0 or self.cone_deg < 0:
            raise InvalidParameters("launcher jitter and cone must be >= 0")
        if not 0 < self.speed[0] <= self.speed[1]:
            raise InvalidParameters("launcher speed range must be positive and ordered")


def _launch_velocity(speed, az, el):
    return speed * np.array([-math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def _first_bounce_x(p0, speed, az, el, aero, geom):
    res = integrate(BallState(0.0, p0, _launch_velocity(speed, az, el)), aero, geom, 2.0)
    b = res.bounces
    return b[0].pre.p[0] if b else -10.0


def aim_launch(p0, speed, aim, aero: AeroParams, geom: TableGeometry):
    """Azimuth and elevation (rad) that put the first bounce at ``aim``."""
    d = np.asarray(aim[:2]) - np.asarray(p0[:2])
    az = math.atan2(d[1], -d[0])
    f = lambda el: _first_bounce_x(p0, speed, az, el, aero, geom) - aim[0]
    lo, hi = math.radians(-10), math.radians(35)
    if f(lo) * f(hi) > 0:
        raise InvalidParameters(f"launch speed {speed:.2f} m/s cannot reach the aim point")
    return az, brentq(f, lo, hi, xtol=1e-10)


def sample_launch(launcher: Launcher, aero: AeroParams, geom: TableGeometry, rng) -> BallState:
    p0 = np.asarray(launcher.center, float) + rng.uniform(-launcher.jitter, launcher.jitter, 3)
    speed = rng.uniform(*launcher.speed)
    az, el = aim_launch(p0, speed, launcher.aim, aero, geom)
    cone = math.radians(launcher.cone_deg)
    az += rng.uniform(-cone, cone)
    el += rng.uniform(-cone, cone)
    return BallState(0.0, p0, _launch_velocity(speed, az, el))


@dataclass(frozen=True)
class Scenario:
    swing: SwingSpec = field(default_factory=lambda: swing_type("loop"))
    n_trials: int = 150
    seed: int = 0
    launcher: Launcher = field(default_factory=Launcher)
    true_aero: AeroParams = field(default_factory=AeroParams)
    model_aero: AeroParams = field(default_factory=AeroParams)
    geom: TableGeometry = field(default_factory=TableGeometry)
    sigma: float = 0.0005
    rate: float = 120.0
    delay: float = 0.010
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gains: PdGains = field(default_factory=PdGains)
    mass_factor: float = 1.0
    torque_noise: float = 0.0
    contact: ContactParams = field(default_factory=ContactParams)
    ready_q: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_trials < 1:
            raise InvalidParameters("n_trials must be >= 1")
        if self.sigma < 0 or self.delay < 0 or self.torque_noise < 0:
            raise InvalidParameters("sigma, delay and torque_noise must be >= 0")
        if not self.mass_factor > 0:
            raise InvalidParameters("mass_factor must be positive")
        if abs(self.mpc.T_swing - self.swing.T_swing) > 1e-12:
            object.__setattr__(self, "mpc", replace(self.mpc, T_swing=self.swing.T_swing))

    @property
    def ready(self) -> am.JointState:
        return am.JointState.rest(self.ready_q)


# -- prediction streams ------------------------------------------------------------

@dataclass
class BallRun:
    start: BallState
    stream: list  # (t_available, StrikePrediction)
    t_cross: float
    p_cross: np.ndarray
    v_cross: np.ndarray
    t_bounce: float | None


def ball_run(sc: Scenario, i: int) -> BallRun | None:
    """Launch ball ``i`` and feed the noisy observations through the estimator.

    Predictions become usable ``sc.delay`` after the frame they came from.
    Returns None when the ball never reaches the strike plane.
    """
    rng = np.random.default_rng([sc.seed, i])
    start = sample_launch(sc.launcher, sc.true_aero, sc.geom, rng)
    truth = integrate(start, sc.true_aero, sc.geom, 2.0)
    cross = truth.crossing
    if cross is None:
        return None
    phase = float(rng.uniform(0.0, 1.0 / sc.rate))
    flight = observe_flight(start, sc.true_aero, sc.geom, rng, sc.sigma, rate=sc.rate, phase=phase)
    est = BallEstimator(sc.model_aero, sc.geom)
    stream = []
    last = None
    for obs in flight.observations:
        pred = est.update(obs)
        if pred is None or not pred.valid:
            continue
        if last is not None and np.array_equal(pred.p_des, last.p_des) and pred.t_strike == last.t_strike:
            continue
        stream.append((obs.t + sc.delay, pred))
        last = pred
    return BallRun(start, stream, cross.t, cross.pre.p.copy(), cross.pre.v.copy(),
                   flight.t_bounce)


def fixed_stream(run: BallRun) -> list:
    """Same arrival times, but every prediction is the true strike point."""
    exact = StrikePrediction(run.p_cross, run.t_cross, run.v_cross, True)
    return [(t, exact) for t, _ in run.stream]


# -- trials --------------------------------------------------------------------------

@dataclass
class TrialResult:
    trial: int
    swing_type: str
    hit: bool
    p_err: float = math.nan
    v_err: float = math.nan
    beta_err: float = math.nan
    alpha_err: float = math.nan
    phi_err: float = math.nan
    theta_err: float = math.nan
    exit_mag_err: float = math.nan
    exit_vert_err: float = math.nan
    exit_horiz_err: float = math.nan
    exit_dir_err: float = math.nan
    approaching: bool = False
    t_err: float = math.nan
    attempts: int = 0
    converged: int = 0
    iterations_median: float = math.nan
    solve_ms_median: float = math.nan
    saturated: bool = False
    error: str = ""

    SCORE_COLUMNS = ("p_err", "v_err", "beta_err", "alpha_err", "phi_err", "theta_err",
                     "exit_mag_err", "exit_vert_err", "exit_horiz_err")


def run_trial(sc: Scenario, i: int, arm: am.ArmParams | None = None) -> TrialResult:
    return execute_trial(sc, i, arm)[0]


def execute_trial(sc: Scenario, i: int, arm: am.ArmParams | None = None):
    """Run trial ``i`` end to end; returns ``(TrialResult, MpcRun or None)``."""
    arm = arm or am.default_arm()
    name = sc.swing.name
    try:
        run = ball_run(sc, i)
    except TTSwingError as exc:
        return TrialResult(i, name, False, error=exc.code), None
    if run is None:
        return TrialResult(i, name, False, error="no-crossing"), None
    if not run.stream:
        return TrialResult(i, name, False, error="no-prediction"), None
    v_des, o_des = spec_to_terminal(sc.swing)
    ready = sc.ready
    plant_arm = arm.scaled_mass(sc.mass_factor) if sc.mass_factor != 1.0 else arm
    dist = Disturbance(sc.torque_noise, np.random.default_rng([sc.seed, i, 1]))
    loop = ClosedLoop(plant_arm, arm, PlantState(0.0, ready.q, ready.qd), sc.gains,
                      control_dt=sc.mpc.interp_dt, disturbance=dist)
    t_end = run.t_cross + sc.mpc.interp_dt
    try:
        mrun = simulate_mpc(arm, ready, sc.swing, run.stream, sc.mpc, t_end, loop=loop, t_event=run.t_cross)
    except TTSwingError as exc:
        return TrialResult(i, name, False, error=exc.code), None
    snap = mrun.strike
    res = TrialResult(i, name, False, attempts=mrun.attempts, converged=mrun.converged,
                      saturated=loop.log.saturated)
    if mrun.records:
        res.iterations_median = float(np.median([r.iterations for r in mrun.records]))
        res.solve_ms_median = float(np.median([r.solve_ms for r in mrun.records]))
        res.t_err = mrun.records[-1].t_strike - run.t_cross
    rel = run.v_cross - snap.v
    res.approaching = bool(rel @ snap.n < 0)
    v_out = v_pred = None
    if res.approaching:
        try:
            v_out = exit_velocity(run.v_cross, snap.v, snap.n, sc.contact)
            v_pred = exit_velocity(run.v_cross, v_des, o_des, sc.contact)
        except NoContact:
            v_out = v_pred = None
    score = score_strike(snap.p, snap.v, snap.n, run.p_cross, v_des, o_des, v_out, v_pred)
    for k in TrialResult.SCORE_COLUMNS + ("exit_dir_err",):
        setattr(res, k, getattr(score, k))
    res.hit = bool(res.approaching and res.p_err <= PADDLE_RADIUS)
    return res, mrun


@dataclass
class TrialReport:
    scenario: Scenario
    results: list

    @property
    def hit_rate(self) -> float:
        return sum(r.hit for r in self.results) / len(self.results)

    @property
    def convergence_ratio(self) -> float:
        att = sum(r.attempts for r in self.results)
        return sum(r.converged for r in self.results) / att if att else math.nan

    def exit_within(self, mag: float = 2.0, angle: float = 10.0) -> float:
        """Fraction of trials whose exit velocity is within ``mag`` m/s and
        ``angle`` degrees (vertical and horizontal) of the intended one."""
        ok = [r.exit_mag_err < mag and r.exit_vert_err < angle and r.exit_horiz_err < angle
              for r in self.results]
        return sum(ok) / len(ok)

    def histogram(self, column: str, edges) -> np.ndarray:
        vals = np.array([getattr(r, column) for r in self.results], float)
        return np.histogram(vals[np.isfinite(vals)], bins=edges)[0]

    def summary(self) -> dict:
        fails = {}
        for r in self.results:
            if r.error:
                fails[r.error] = fails.get(r.error, 0) + 1
        p = np.array([r.p_err for r in self.results], float)
        return {
            "swing_type": self.scenario.swing.name, "trials": len(self.results),
            "hit_rate": self.hit_rate, "convergence_ratio": self.convergence_ratio,
            "exit_within_2mps_10deg": self.exit_within(),
            "p_err_median": float(np.nanmedian(p)) if np.isfinite(p).any() else math.nan,
            "failures": fails,
        }


def run_trials(sc: Scenario, arm: am.ArmParams | None = None, trials=None) -> TrialReport:
    arm = arm or am.default_arm()
    idx = range(sc.n_trials) if trials is None else trials
    return TrialReport(sc, [run_trial(sc, i, arm) for i in idx])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.6g}"


def write_scores_csv(path, results):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA.format(kind='scores')}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "swing_type", *TrialResult.SCORE_COLUMNS, "hit"])
        for r in results:
            w.writerow([r.trial, r.swing_type, *(_fmt(getattr(r, k)) for k in TrialResult.SCORE_COLUMNS),
                        int(r.hit)])


def write_histogram_csv(path, report: TrialReport, column: str, edges):
    counts = report.histogram(column, edges)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA.format(kind='histogram')}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "lo", "hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([column, _fmt(float(lo)), _fmt(float(hi)), int(c)])


# -- MPC benchmark -------------------------------------------------------------------

BENCH_CONDITIONS = ("fixed", "replayed", "cold")


@dataclass
class BenchCell:
    mode: str
    condition: str
    attempts: int
    converged: int
    iterations: list
    solve_ms: list

    @property
    def ratio(self) -> float:
        return self.converged / self.attempts if self.attempts else math.nan

    @property
    def median_iterations(self) -> float:
        return float(np.median(self.iterations)) if self.iterations else math.nan

    @property
    def median_ms(self) -> float:
        return float(np.median(self.solve_ms)) if self.solve_ms else math.nan


@dataclass
class BenchReport:
    cells: list
    n_streams: int

    def cell(self, mode, condition) -> BenchCell:
        for c in self.cells:
            if c.mode == mode and c.condition == condition:
                return c
        raise KeyError((mode, condition))

    def write_csv(self, path, timing: bool = False):
        with open(path, "w", newline="") as fh:
            fh.write(f"# {SCHEMA.format(kind='bench')}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "condition", "attempts", "converged", "ratio", "median_iterations",
                        "median_solve_ms"])
            for c in self.cells:
                w.writerow([c.mode, c.condition, c.attempts, c.converged, f"{c.ratio:.4f}",
                            _fmt(c.median_iterations), f"{c.median_ms:.3f}" if timing else ""])

    def text(self, timing: bool = False) -> str:
        lines = [f"MPC benchmark over {self.n_streams} prediction streams",
                 f"{'mode':<4} {'condition':<9} {'converge':>9} {'med iters':>9}" + ("  med ms" if timing else "")]
        for c in self.cells:
            row = f"{c.mode:<4} {c.condition:<9} {100 * c.ratio:8.1f}% {c.median_iterations:9.1f}"
            if timing:
                row += f" {c.median_ms:7.2f}"
            lines.append(row)
        return "\n".join(lines)


def bench_streams(sc: Scenario, n: int) -> list:
    """Noisy prediction streams for ``n`` launches of ``sc``."""
    runs = []
    i = 0
    while len(runs) < n:
        r = ball_run(sc, i)
        if r is not None and r.stream:
            runs.append(r)
        i += 1
        if i > 10 * n:
            raise InvalidParameters("launcher produces too few usable flights")
    return runs


def bench_mpc(runs, swing: SwingSpec, cfg: MpcConfig | None = None, arm: am.ArmParams | None = None,
              ready: am.JointState | None = None, modes=("FH", "SH")) -> BenchReport:
    """Convergence and solve statistics for FH/SH on fixed and replayed
    streams, and on the replayed streams without warm starts ("cold").

    The arm is assumed to track its setpoints exactly, so SH plans from the
    commanded state.
    """
    if len(runs) < 50:
        raise InvalidParameters("the benchmark needs at least 50 streams")
    arm = arm or am.default_arm()
    ready = ready or am.JointState.rest(np.zeros(arm.n_joints))
    cfg = cfg or MpcConfig(T_swing=swing.T_swing)
    cells = []
    for mode in modes:
        for cond in BENCH_CONDITIONS:
            c = replace(cfg, mode=mode, warm_start=cond != "cold")
            cell = BenchCell(mode, cond, 0, 0, [], [])
            for r in runs:
                stream = fixed_stream(r) if cond == "fixed" else r.stream
                out = simulate_mpc(arm, ready, swing, stream, c, stream[-1][0] + c.interp_dt)
                cell.attempts += out.attempts
                cell.converged += out.converged
                cell.iterations += [x.iterations for x in out.records]
                cell.solve_ms += [x.solve_ms for x in out.records]
            cells.append(cell)
    return BenchReport(cells, len(runs))
