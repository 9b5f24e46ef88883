"""Ball state estimation from noisy positions and strike-plane prediction."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ball_dynamics import DEFAULT_DT, AeroParams, BallState, TableGeometry, integrate
from .errors import DegenerateWindow, InvalidParameters, NoPrediction

MAX_WINDOW_SPAN = 0.2


@dataclass(frozen=True)
class Observation:
    t: float
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))


@dataclass(frozen=True)
class StrikePrediction:
    p_des: np.ndarray
    t_strike: float
    v_at_plane: np.ndarray
    valid: bool
    samples_used: int = 0
    t_obs: float = float("nan")

    @staticmethod
    def invalid(t_obs: float, samples_used: int = 0) -> "StrikePrediction":
        nan3 = np.full(3, np.nan)
        return StrikePrediction(nan3, float("nan"), nan3, False, samples_used, t_obs)


def estimate_state(window) -> BallState:
    """Per-axis cubic least squares; returns position and velocity at the newest sample."""
    if len(window) < 4:
        raise DegenerateWindow(f"cubic fit needs 4 samples, got {len(window)}")
    t = np.array([o.t for o in window], dtype=float)
    P = np.array([o.p for o in window], dtype=float)
    t_new = t[-1]
    span = t_new - t.min()
    if span > MAX_WINDOW_SPAN + 1e-9:
        raise InvalidParameters(f"window spans {span:.3f} s, limit is {MAX_WINDOW_SPAN} s")
    if len(np.unique(t)) < 4 or span <= 0:
        raise DegenerateWindow("fewer than 4 distinct timestamps in window")
    s = (t - t_new) / span
    A = np.vander(s, 4, increasing=True)
    coef, _, rank, sv = np.linalg.lstsq(A, P, rcond=None)
    if rank < 4 or sv[-1] < 1e-10 * sv[0]:
        raise DegenerateWindow("time matrix is rank deficient")
    return BallState(t_new, coef[0], coef[1] / span)


def finite_difference_state(window) -> BallState:
    """Two-point backward difference, kept as a baseline for comparison."""
    a, b = window[-2], window[-1]
    return BallState(b.t, b.p, (b.p - a.p) / (b.t - a.t))


def predict_strike(state: BallState, params: AeroParams, geom: TableGeometry,
                   horizon: float = 2.0, dt: float = DEFAULT_DT,
                   samples_used: int = 0) -> StrikePrediction:
    x0 = state.p[0]
    if x0 == geom.x_strike:
        return StrikePrediction(state.p.copy(), state.t, state.v.copy(), True, samples_used, state.t)
    if x0 < geom.x_strike:
        return StrikePrediction.invalid(state.t, samples_used)
    res = integrate(state, params, geom, horizon, dt=dt, stop_at_crossing=True)
    ev = res.crossing
    if ev is None:
        return StrikePrediction.invalid(state.t, samples_used)
    return StrikePrediction(ev.pre.p.copy(), ev.t, ev.pre.v.copy(), True, samples_used, state.t)


def smooth(history, n: int = 10) -> StrikePrediction:
    """Moving average of p_des and t_strike over the last ``n`` valid predictions."""
    valid = [h for h in history if h.valid][-n:]
    if not valid:
        raise NoPrediction("no valid predictions to average")
    p = np.mean([h.p_des for h in valid], axis=0)
    t = float(np.mean([h.t_strike for h in valid]))
    v = np.mean([h.v_at_plane for h in valid], axis=0)
    last = valid[-1]
    return StrikePrediction(p, t, v, True, last.samples_used, last.t_obs)


class BallEstimator:
    """Stream processor: observations in, smoothed strike predictions out.

    The fit window is cleared when a bounce is detected (a local minimum in
    height near the table), and the prediction history is cleared with it so
    the average does not mix pre- and post-bounce predictions.

    ``mode="exact"`` bypasses the polynomial fit and uses the state passed to
    :meth:`update`; it exists to check the prediction pipeline in isolation.
    """

    def __init__(self, params: AeroParams, geom: TableGeometry, window: int = 12,
                 average: int = 10, min_post_bounce: int = 6, mode: str = "cubic",
                 horizon: float = 2.0, dt: float = DEFAULT_DT, bounce_margin: float = 0.1):
        if mode not in ("cubic", "fd", "exact"):
            raise InvalidParameters(f"unknown estimator mode {mode!r}")
        self.params = params
        self.geom = geom
        self.window_len = int(window)
        self.average = int(average)
        self.min_post_bounce = int(min_post_bounce)
        self.mode = mode
        self.horizon = horizon
        self.dt = dt
        self.bounce_margin = bounce_margin
        self.window: list[Observation] = []
        self.raw: list[StrikePrediction] = []
        self.bounced = False
        self._since_bounce = 0

    def _detect_bounce(self) -> bool:
        if len(self.window) < 3:
            return False
        z0, z1, z2 = (o.p[2] for o in self.window[-3:])
        return z1 < z0 and z1 < z2 and z1 < self.geom.z_table + self.bounce_margin

    def update(self, obs: Observation, true_state: BallState | None = None) -> StrikePrediction | None:
        if self.window and obs.t <= self.window[-1].t:
            raise InvalidParameters("observation timestamps must be strictly increasing")
        self.window.append(obs)
        self._since_bounce += 1
        if not self.bounced and self._detect_bounce():
            self.bounced = True
            self.window = self.window[-1:]
            self._since_bounce = 1
            self.raw = []
        self.window = self.window[-self.window_len:]
        while self.window[-1].t - self.window[0].t > MAX_WINDOW_SPAN:
            self.window.pop(0)
        if self.mode == "exact":
            if true_state is None:
                raise InvalidParameters("exact mode needs the true state")
            state = true_state
        else:
            need = 4 if self.mode == "cubic" else 2
            if self.bounced and self._since_bounce < self.min_post_bounce:
                return self.current()
            if len(self.window) < need:
                return self.current()
            state = estimate_state(self.window) if self.mode == "cubic" else finite_difference_state(self.window)
        pred = predict_strike(state, self.params, self.geom, self.horizon, self.dt, len(self.window))
        self.raw.append(pred)
        self.raw = self.raw[-self.average:]
        return self.current()

    def current(self) -> StrikePrediction | None:
        try:
            return smooth(self.raw, self.average)
        except NoPrediction:
            return None


# -- simulated observation streams ------------------------------------------

@dataclass
class ObservedFlight:
    observations: list
    truth: list  # BallState at each observation time
    t_strike: float
    p_strike: np.ndarray
    t_bounce: float | None
    valid: bool = True


def observe_flight(start: BallState, params: AeroParams, geom: TableGeometry,
                   rng: np.random.Generator | None = None, sigma: float = 0.0005,
                   rate: float = 120.0, phase: float = 0.0, dropout: float = 0.0,
                   horizon: float = 2.0, dt: float = DEFAULT_DT) -> ObservedFlight:
    """Sample a simulated flight at the camera rate with Gaussian position noise.

    The ground truth between frames is propagated frame to frame, so truth
    states at observation times are exact integrator states.
    """
    full = integrate(start, params, geom, horizon, dt=dt)
    cross = full.crossing
    t_bounce = full.bounces[0].t if full.bounces else None
    period = 1.0 / rate
    obs, truth = [], []
    state = start
    if phase > 0:
        state = _advance(state, phase, params, geom, dt)
    while state is not None and state.p[0] > geom.x_strike:
        if rng is None or dropout <= 0 or rng.random() >= dropout:
            noise = rng.normal(0.0, sigma, 3) if (rng is not None and sigma > 0) else np.zeros(3)
            obs.append(Observation(state.t, state.p + noise))
            truth.append(state)
        state = _advance(state, period, params, geom, dt)
        if state is not None and state.t - start.t > horizon:
            break
    if cross is None:
        return ObservedFlight(obs, truth, float("nan"), np.full(3, np.nan), t_bounce, False)
    return ObservedFlight(obs, truth, cross.t, cross.pre.p.copy(), t_bounce, True)


def _advance(state, h, params, geom, dt):
    res = integrate(state, params, geom, h, dt=min(dt, h), stop_at_crossing=True)
    if res.status == "crossed":
        return None
    return BallState(res.t[-1], res.p[-1], res.v[-1])


# -- error characterisation ---------------------------------------------------

@dataclass
class ErrorTable:
    records: np.ndarray  # columns: time_to_strike, p_err, t_err, after_bounce
    bin_edges: np.ndarray
    bin_p_mean: np.ndarray
    bin_t_mean: np.ndarray
    bin_count: np.ndarray
    bin_after_bounce: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def mean_p_err_at(self, time_to_strike: float) -> float:
        k = int(np.searchsorted(self.bin_edges, time_to_strike, side="right") - 1)
        k = min(max(k, 0), len(self.bin_p_mean) - 1)
        return float(self.bin_p_mean[k])

    def post_bounce_means(self) -> tuple[np.ndarray, np.ndarray]:
        """(bin centre, mean p_err) over after-bounce records only, ordered by time to strike."""
        R = self.records[self.records[:, 3] > 0.5]
        centres, means = [], []
        for k in range(len(self.bin_edges) - 1):
            m = (R[:, 0] >= self.bin_edges[k]) & (R[:, 0] < self.bin_edges[k + 1])
            if m.any():
                centres.append(0.5 * (self.bin_edges[k] + self.bin_edges[k + 1]))
                means.append(R[m, 1].mean())
        return np.array(centres), np.array(means)

    def rows(self):
        for k in range(len(self.bin_p_mean)):
            yield (0.5 * (self.bin_edges[k] + self.bin_edges[k + 1]), self.bin_p_mean[k],
                   self.bin_t_mean[k], int(self.bin_count[k]), bool(self.bin_after_bounce[k]))


def characterize_errors(launches, true_params: AeroParams, model_params: AeroParams,
                        geom: TableGeometry, sigma: float = 0.0005, seed: int = 0,
                        bin_width: float = 0.05, max_time: float = 1.0,
                        mode: str = "cubic", rate: float = 120.0) -> ErrorTable:
    """Prediction error against time remaining before the true strike.

    ``launches`` is a sequence of BallState initial conditions.  Errors are
    those of the smoothed prediction available after each observation.
    """
    recs = []
    for i, start in enumerate(launches):
        rng = np.random.default_rng([seed, i])
        phase = float(rng.uniform(0, 1.0 / rate))
        flight = observe_flight(start, true_params, geom, rng, sigma, rate=rate, phase=phase)
        if not flight.valid:
            continue
        est = BallEstimator(model_params, geom, mode=mode)
        for obs, tru in zip(flight.observations, flight.truth):
            pred = est.update(obs, tru)
            if pred is None:
                continue
            tts = flight.t_strike - obs.t
            after = flight.t_bounce is not None and obs.t > flight.t_bounce
            recs.append((tts, float(np.linalg.norm(pred.p_des - flight.p_strike)),
                         abs(pred.t_strike - flight.t_strike), float(after)))
    R = np.array(recs, dtype=float).reshape(-1, 4)
    edges = np.arange(0.0, max_time + bin_width / 2, bin_width)
    nb = len(edges) - 1
    pm, tm, cnt, ab = np.full(nb, np.nan), np.full(nb, np.nan), np.zeros(nb, int), np.zeros(nb, bool)
    for k in range(nb):
        m = (R[:, 0] >= edges[k]) & (R[:, 0] < edges[k + 1])
        cnt[k] = int(m.sum())
        if cnt[k]:
            pm[k] = R[m, 1].mean()
            tm[k] = R[m, 2].mean()
            ab[k] = R[m, 3].mean() > 0.5
    return ErrorTable(R, edges, pm, tm, cnt, ab)


# -- CSV ----------------------------------------------------------------------

def write_observations_csv(path, observations, schema: str = "ttswing-observations v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "px", "py", "pz"])
        for o in observations:
            w.writerow([repr(o.t), *(repr(float(x)) for x in o.p)])


def read_observations_csv(path) -> list[Observation]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][:4] != ["t", "px", "py", "pz"]:
        raise InvalidParameters(f"{path}: expected header t,px,py,pz")
    try:
        return [Observation(float(r[0]), [float(x) for x in r[1:4]]) for r in rows[1:]]
    except (ValueError, IndexError):
        raise InvalidParameters(f"{path}: malformed numeric row") from None


def write_predictions_csv(path, rows, schema: str = "ttswing-predictions v1"):
    """``rows`` is a sequence of (t_obs, StrikePrediction)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "valid", "t_strike", "pdes_x", "pdes_y", "pdes_z", "vx", "vy", "vz"])
        for t, p in rows:
            if p.valid:
                w.writerow([repr(float(t)), 1, repr(float(p.t_strike)), *(repr(float(x)) for x in p.p_des),
                            *(repr(float(x)) for x in p.v_at_plane)])
            else:
                w.writerow([repr(float(t)), 0, "", "", "", "", "", "", ""])
