"""Ball flight with quadratic drag, table bounce, and parameter fitting.

Flight:  a = -D |v| v + g
Bounce:  v'_xy = C_h v_xy,  v'_z = -C_v v_z

``integrate`` is a fixed-step RK4 with event localisation (bisection on the
RK4 sub-step, then a secant refinement inside the final bracket).  The inner
loop works on plain floats; numpy is only used to package results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientExcitation, InvalidParameters, RisingBall

DEFAULT_DT = 1.0 / 480.0


@dataclass(frozen=True)
class BallState:
    t: float
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))


@dataclass(frozen=True)
class AeroParams:
    D: float = 0.12
    C_h: float = 0.75
    C_v: float = 0.88
    g: tuple = (0.0, 0.0, -9.81)

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        if len(self.g) != 3:
            raise InvalidParameters("g must be a 3-vector")
        if not self.D >= 0:
            raise InvalidParameters(f"D must be >= 0, got {self.D}")
        for name in ("C_h", "C_v"):
            c = getattr(self, name)
            if not 0 < c <= 1:
                raise InvalidParameters(f"{name} must lie in (0, 1], got {c}")

    def with_drag(self, D: float) -> "AeroParams":
        return AeroParams(D, self.C_h, self.C_v, self.g)


@dataclass(frozen=True)
class TableGeometry:
    """Bounce plane, strike plane and table rectangle (world frame, metres).

    The table occupies ``x_near <= x <= x_near + extents[0]`` and
    ``|y - y_center| <= extents[1] / 2`` at height ``z_table``.  ``bounds`` is
    the box outside of which a flight is flagged out-of-bounds.
    """

    z_table: float = -0.45
    x_strike: float = 0.0
    extents: tuple = (2.74, 1.525)
    x_near: float = 0.25
    y_center: float = -0.25
    bounds: tuple = ((-1.0, 4.5), (-2.5, 2.5), (-1.5, 3.0))

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "bounds", tuple(tuple(float(b) for b in ax) for ax in self.bounds))
        if len(self.extents) != 2 or min(self.extents) <= 0:
            raise InvalidParameters("table extents must be two positive lengths")

    def on_table(self, x: float, y: float) -> bool:
        return (self.x_near <= x <= self.x_near + self.extents[0]
                and abs(y - self.y_center) <= 0.5 * self.extents[1])

    def in_bounds(self, x: float, y: float, z: float) -> bool:
        (x0, x1), (y0, y1), (z0, z1) = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1 and z0 <= z <= z1


@dataclass(frozen=True)
class FlightEvent:
    kind: str  # "bounce" or "crossing"
    t: float
    pre: BallState
    post: BallState


@dataclass
class FlightResult:
    """Sampled trajectory; bounce instants appear twice (pre then post)."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    labels: list
    events: list = field(default_factory=list)
    status: str = "horizon"  # crossed | no-crossing | out-of-bounds | horizon

    @property
    def states(self) -> list[BallState]:
        return [BallState(t, p, v) for t, p, v in zip(self.t, self.p, self.v)]

    @property
    def crossing(self) -> FlightEvent | None:
        for ev in self.events:
            if ev.kind == "crossing":
                return ev
        return None

    @property
    def bounces(self) -> list[FlightEvent]:
        return [ev for ev in self.events if ev.kind == "bounce"]

    def segments(self):
        """Bounce-free pieces as (t, p, v) arrays."""
        cuts = [0]
        for k in range(1, len(self.t)):
            if self.t[k] == self.t[k - 1]:
                cuts.append(k)
        cuts.append(len(self.t))
        return [(self.t[a:b], self.p[a:b], self.v[a:b]) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]

    def positions_at(self, times) -> np.ndarray:
        """Cubic Hermite interpolation of position at arbitrary times."""
        times = np.atleast_1d(np.asarray(times, float))
        out = np.empty((len(times), 3))
        segs = self.segments()
        starts = np.array([s[0][0] for s in segs])
        for k, tq in enumerate(times):
            si = max(int(np.searchsorted(starts, tq, side="right")) - 1, 0)
            ts, ps, vs = segs[si]
            i = int(np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, max(len(ts) - 2, 0)))
            if len(ts) == 1:
                out[k] = ps[0] + vs[0] * (tq - ts[0])
                continue
            h = ts[i + 1] - ts[i]
            s = (tq - ts[i]) / h
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            out[k] = h00 * ps[i] + h10 * h * vs[i] + h01 * ps[i + 1] + h11 * h * vs[i + 1]
        return out


def flight_accel(state: BallState, params: AeroParams) -> np.ndarray:
    v = state.v
    return -params.D * np.linalg.norm(v) * v + np.asarray(params.g)


def bounce_map(v_pre, params: AeroParams) -> np.ndarray:
    v = np.asarray(v_pre, dtype=float)
    if not v[2] < 0:
        raise RisingBall(f"bounce requires a descending ball, got v_z = {v[2]}")
    return np.array([params.C_h * v[0], params.C_h * v[1], -params.C_v * v[2]])


def _rk4(px, py, pz, vx, vy, vz, h, D, gx, gy, gz):
    s = math.sqrt(vx * vx + vy * vy + vz * vz)
    a1x, a1y, a1z = gx - D * s * vx, gy - D * s * vy, gz - D * s * vz
    hh = 0.5 * h
    ux, uy, uz = vx + hh * a1x, vy + hh * a1y, vz + hh * a1z
    s = math.sqrt(ux * ux + uy * uy + uz * uz)
    a2x, a2y, a2z = gx - D * s * ux, gy - D * s * uy, gz - D * s * uz
    wx, wy, wz = vx + hh * a2x, vy + hh * a2y, vz + hh * a2z
    s = math.sqrt(wx * wx + wy * wy + wz * wz)
    a3x, a3y, a3z = gx - D * s * wx, gy - D * s * wy, gz - D * s * wz
    rx, ry, rz = vx + h * a3x, vy + h * a3y, vz + h * a3z
    s = math.sqrt(rx * rx + ry * ry + rz * rz)
    a4x, a4y, a4z = gx - D * s * rx, gy - D * s * ry, gz - D * s * rz
    h6 = h / 6.0
    return (
        px + h6 * (vx + 2 * ux + 2 * wx + rx),
        py + h6 * (vy + 2 * uy + 2 * wy + ry),
        pz + h6 * (vz + 2 * uz + 2 * wz + rz),
        vx + h6 * (a1x + 2 * a2x + 2 * a3x + a4x),
        vy + h6 * (a1y + 2 * a2y + 2 * a3y + a4y),
        vz + h6 * (a1z + 2 * a2z + 2 * a3z + a4z),
    )


def _localize(y0, h, coeffs, fn, tol):
    """Sub-step tau in (0, h] where fn(state(tau)) changes sign from >0 to <=0."""
    lo, hi = 0.0, h
    f_lo = fn(y0)
    f_hi = fn(_rk4(*y0, hi, *coeffs))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(_rk4(*y0, mid, *coeffs))
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    if f_lo - f_hi > 0:
        return lo + (hi - lo) * f_lo / (f_lo - f_hi)
    return hi


def integrate(state: BallState, params: AeroParams, geom: TableGeometry, horizon: float,
              dt: float = DEFAULT_DT, stop_at_crossing: bool = True,
              event_tol: float = 1e-6) -> FlightResult:
    """RK4 flight with table bounces and strike-plane crossing detection.

    The crossing event fires the first time x passes ``geom.x_strike`` while
    moving toward the arm (v_x < 0).  Bounces fire when the ball descends
    through ``z_table`` above the table rectangle.
    """
    if not dt > 0 or not horizon > 0:
        raise InvalidParameters("dt and horizon must be positive")
    D = params.D
    coeffs = (D, *params.g)
    zt, xs = geom.z_table, geom.x_strike
    t = state.t
    y = (*map(float, state.p), *map(float, state.v))
    T = [t]
    Y = [y]
    labels = [""]
    events = []
    t_end = t + horizon
    status = "horizon"

    def above_table(s):
        return s[2] - zt

    def before_plane(s):
        return s[0] - xs

    if y[0] == xs and y[3] < 0 and stop_at_crossing:
        st = BallState(t, y[:3], y[3:])
        events.append(FlightEvent("crossing", t, st, st))
        labels[0] = "crossing"
        return _pack(T, Y, labels, events, "crossed")
    if not geom.in_bounds(*y[:3]):
        return _pack(T, Y, labels, events, "out-of-bounds")

    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        y1 = _rk4(*y, h, *coeffs)
        tau_b = tau_c = None
        if y[2] >= zt and y1[2] < zt and y[5] < 0:
            tau = _localize(y, h, coeffs, above_table, event_tol)
            yb = _rk4(*y, tau, *coeffs)
            if geom.on_table(yb[0], yb[1]) and yb[5] < 0:
                tau_b = tau
        if y[0] > xs and y1[0] <= xs:
            tau_c = _localize(y, h, coeffs, before_plane, event_tol)
        if tau_c is not None and (tau_b is None or tau_c <= tau_b):
            yc = list(_rk4(*y, tau_c, *coeffs))
            yc[0] = xs
            yc = tuple(yc)
            tc = t + tau_c
            T.append(tc)
            Y.append(yc)
            labels.append("crossing")
            st = BallState(tc, yc[:3], yc[3:])
            events.append(FlightEvent("crossing", tc, st, st))
            if stop_at_crossing:
                status = "crossed"
                break
            y = yc
            t = tc
            continue
        if tau_b is not None:
            yb = list(_rk4(*y, tau_b, *coeffs))
            yb[2] = zt
            tb = t + tau_b
            pre = BallState(tb, yb[:3], yb[3:])
            vpost = bounce_map(pre.v, params)
            post = BallState(tb, yb[:3], vpost)
            T += [tb, tb]
            Y += [tuple(yb), (yb[0], yb[1], yb[2], *map(float, vpost))]
            labels += ["bounce_in", "bounce_out"]
            events.append(FlightEvent("bounce", tb, pre, post))
            y = Y[-1]
            t = tb
            continue
        t = t + h
        y = y1
        T.append(t)
        Y.append(y)
        labels.append("")
        if not geom.in_bounds(y[0], y[1], y[2]):
            status = "out-of-bounds"
            break
    if status == "horizon" and stop_at_crossing:
        status = "no-crossing"
    return _pack(T, Y, labels, events, status)


def _pack(T, Y, labels, events, status) -> FlightResult:
    Ya = np.array(Y, dtype=float)
    return FlightResult(np.array(T, dtype=float), Ya[:, :3].copy(), Ya[:, 3:].copy(),
                        labels, events, status)


# -- identification ---------------------------------------------------------

def central_differences(t, p, stride: int = 1):
    """Velocity and acceleration from central differences with a sample stride.

    Returns (v, a) for interior samples; the first and last ``stride`` samples
    are dropped.  Requires uniform sampling.
    """
    t = np.asarray(t, float)
    p = np.asarray(p, float)
    k = int(stride)
    if len(t) < 2 * k + 1:
        return np.empty((0, 3)), np.empty((0, 3))
    h = (t[-1] - t[0]) / (len(t) - 1)
    v = (p[2 * k:] - p[:-2 * k]) / (2 * k * h)
    a = (p[2 * k:] - 2 * p[k:-k] + p[:-2 * k]) / (k * h) ** 2
    return v, a


def _uniform_runs(t, rtol=1e-6):
    """Split index ranges where the sample spacing changes."""
    t = np.asarray(t, float)
    if len(t) < 3:
        return [(0, len(t))]
    d = np.diff(t)
    runs, start = [], 0
    for i in range(1, len(d)):
        if abs(d[i] - d[start]) > rtol * max(abs(d[start]), 1e-12):
            runs.append((start, i + 1))
            start = i + 1
            if start >= len(d):
                break
    runs.append((start, len(t)))
    return [(a, b) for a, b in runs if b - a >= 3]


@dataclass
class DragFit:
    D: float
    residual: float
    n_samples: int


def fit_drag(trajectories, g=(0.0, 0.0, -9.81), baseline: float = 0.15,
             min_speed: float = 0.1) -> DragFit:
    """Least-squares fit of |a - g| = D |v|^2 over bounce-free segments.

    ``trajectories`` is a sequence of (t, p) pairs (extra items ignored).
    Velocities and accelerations come from central differences of positions
    spanning roughly ``baseline`` seconds.
    """
    g = np.asarray(g, float)
    xs, ys = [], []
    for traj in trajectories:
        t, p = np.asarray(traj[0], float), np.asarray(traj[1], float)
        for a, b in _uniform_runs(t):
            tt, pp = t[a:b], p[a:b]
            h = (tt[-1] - tt[0]) / (len(tt) - 1)
            stride = max(1, int(round(baseline / (2 * h))))
            v, acc = central_differences(tt, pp, stride)
            if len(v) == 0:
                continue
            xs.append(np.sum(v * v, axis=1))
            ys.append(np.linalg.norm(acc - g, axis=1))
    if not xs:
        raise InsufficientExcitation("no usable samples for the drag fit")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    keep = x >= min_speed**2
    if keep.sum() < 2:
        raise InsufficientExcitation("all sample speeds below %.2f m/s" % min_speed)
    x, y = x[keep], y[keep]
    D = max(float(x @ y / (x @ x)), 0.0)
    return DragFit(D, float(np.sqrt(np.mean((y - D * x) ** 2))), int(len(x)))


@dataclass
class BounceFit:
    C_h: float
    C_v: float
    residual_h: float
    residual_v: float


def fit_bounce(pairs, eps: float = 1e-9) -> BounceFit:
    """Scalar least-squares restitution ratios from (v_pre, v_post) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise InsufficientExcitation("need at least one bounce pair")
    pre = np.array([np.asarray(a, float) for a, _ in pairs])
    post = np.array([np.asarray(b, float) for _, b in pairs])
    xh, yh = pre[:, :2].ravel(), post[:, :2].ravel()
    xv, yv = -pre[:, 2], post[:, 2]
    if xh @ xh < eps:
        raise InsufficientExcitation("horizontal channel: pre-bounce velocities are all ~0")
    if xv @ xv < eps:
        raise InsufficientExcitation("vertical channel: pre-bounce velocities are all ~0")
    ch = float(xh @ yh / (xh @ xh))
    cv = float(xv @ yv / (xv @ xv))
    ch = min(max(ch, 1e-9), 1.0)
    cv = min(max(cv, 1e-9), 1.0)
    return BounceFit(ch, cv, float(np.sqrt(np.mean((yh - ch * xh) ** 2))),
                     float(np.sqrt(np.mean((yv - cv * xv) ** 2))))


# -- CSV ----------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "px", "py", "pz", "vx", "vy", "vz", "event")


def write_trajectory_csv(path, result: FlightResult, schema: str = "ttswing-trajectory v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t, p, v, lab in zip(result.t, result.p, result.v, result.labels):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in p), *(repr(float(x)) for x in v), lab])


def read_trajectory_csv(path) -> FlightResult:
    """Inverse of :func:`write_trajectory_csv`; bounce and crossing events are
    rebuilt from the ``event`` column."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != TRAJECTORY_COLUMNS:
        raise InvalidParameters(f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise InvalidParameters(f"{path}: no samples")
    try:
        num = np.array([[float(x) for x in r[:7]] for r in body])
    except (ValueError, IndexError):
        raise InvalidParameters(f"{path}: malformed numeric row") from None
    labels = [r[7] if len(r) > 7 else "" for r in body]
    events = []
    for k, lab in enumerate(labels):
        st = BallState(num[k, 0], num[k, 1:4], num[k, 4:7])
        if lab == "bounce_in" and k + 1 < len(labels) and labels[k + 1] == "bounce_out":
            post = BallState(num[k + 1, 0], num[k + 1, 1:4], num[k + 1, 4:7])
            events.append(FlightEvent("bounce", st.t, st, post))
        elif lab == "crossing":
            events.append(FlightEvent("crossing", st.t, st, st))
    status = "crossed" if any(e.kind == "crossing" for e in events) else "horizon"
    return FlightResult(num[:, 0], num[:, 1:4].copy(), num[:, 4:7].copy(), labels, events, status)
