"""Spin-free paddle/ball impact and strike scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameters, NoContact


@dataclass(frozen=True)
class SwingSpec:
    """Strike direction angles in degrees; theta/alpha azimuth, phi/beta elevation."""

    theta: float = 0.0
    phi: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    speed: float = 6.0
    T_swing: float = 0.5
    name: str = "custom"

    def __post_init__(self):
        for k in ("theta", "phi", "alpha", "beta"):
            if not -90.0 <= getattr(self, k) <= 90.0:
                raise InvalidParameters(f"{k} must lie within +-90 deg")
        if not self.speed > 0:
            raise InvalidParameters("speed must be positive")
        if not self.T_swing > 0:
            raise InvalidParameters("T_swing must be positive")


SWING_TYPES = {
    "loop": SwingSpec(0.0, 45.0, 0.0, -7.0, name="loop"),
    "chop": SwingSpec(0.0, -18.0, 0.0, 12.0, name="chop"),
    "drive": SwingSpec(0.0, 0.0, 0.0, 0.0, name="drive"),
}


def swing_type(name: str, speed: float = 6.0, T_swing: float = 0.5) -> SwingSpec:
    try:
        base = SWING_TYPES[name.lower()]
    except KeyError:
        raise InvalidParameters(f"unknown swing type {name!r}; choose from {sorted(SWING_TYPES)}") from None
    return SwingSpec(base.theta, base.phi, base.alpha, base.beta, speed, T_swing, base.name)


@dataclass(frozen=True)
class ContactParams:
    e_n: float = 0.85
    k_t: float = 0.75

    def __post_init__(self):
        if not (0 < self.e_n <= 1 and 0 < self.k_t <= 1):
            raise InvalidParameters("e_n and k_t must lie in (0, 1]")


def _direction(azimuth_deg, elevation_deg):
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def spec_to_terminal(spec: SwingSpec, strike_rotation=None):
    """Return (v_des, o_des) in the world frame.

    ``strike_rotation`` maps strike-frame vectors to world; identity means the
    strike X axis is the world X axis (toward the launcher).
    """
    v = spec.speed * _direction(spec.theta, spec.phi)
    o = _direction(spec.alpha, spec.beta)
    if strike_rotation is not None:
        R = np.asarray(strike_rotation, float)
        v, o = R @ v, R @ o
    return v, o / np.linalg.norm(o)


def exit_velocity(v_ball_in, v_paddle, normal, cp: ContactParams = ContactParams()) -> np.ndarray:
    v_in = np.asarray(v_ball_in, float)
    v_p = np.asarray(v_paddle, float)
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    r = v_in - v_p
    rn = float(r @ n)
    if not rn < 0:
        raise NoContact(f"relative normal velocity {rn:.4g} >= 0, ball is not approaching the face")
    r_n = rn * n
    r_t = r - r_n
    return v_p - cp.e_n * r_n + cp.k_t * r_t


def fit_contact(records):
    """Least-squares (e_n, k_t) from (v_in, v_p, n, v_out) records."""
    a_n = b_n = a_t = b_t = 0.0
    for v_in, v_p, n, v_out in records:
        n = np.asarray(n, float) / np.linalg.norm(n)
        r = np.asarray(v_in, float) - np.asarray(v_p, float)
        s = np.asarray(v_out, float) - np.asarray(v_p, float)
        rn = (r @ n) * n
        rt = r - rn
        a_n += rn @ rn
        b_n += -(s @ n) * (r @ n)
        a_t += rt @ rt
        b_t += (s - (s @ n) * n) @ rt
    return ContactParams(min(max(b_n / a_n, 1e-9), 1.0), min(max(b_t / max(a_t, 1e-300), 1e-9), 1.0))


def _angles(vec):
    """(azimuth, elevation) in degrees."""
    x, y, z = vec
    return math.degrees(math.atan2(y, x)), math.degrees(math.atan2(z, math.hypot(x, y)))


def _angle_between(a, b):
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


@dataclass
class StrikeScore:
    p_err: float
    v_err: float
    beta_err: float
    alpha_err: float
    phi_err: float
    theta_err: float
    exit_mag_err: float = float("nan")
    exit_vert_err: float = float("nan")
    exit_horiz_err: float = float("nan")
    exit_dir_err: float = float("nan")

    def as_row(self):
        return [self.p_err, self.v_err, self.beta_err, self.alpha_err, self.phi_err, self.theta_err,
                self.exit_mag_err, self.exit_vert_err, self.exit_horiz_err]


def _wrap(d):
    return abs((d + 180.0) % 360.0 - 180.0)


def score_strike(p, v, o, p_des, v_des, o_des, v_out_measured=None, v_out_predicted=None) -> StrikeScore:
    """Compare measured paddle state against the target; optionally score exit velocity.

    Exit-velocity errors: magnitude difference, and absolute differences of the
    vertical (elevation) and horizontal (azimuth) angles, all against the
    model prediction.
    """
    p, v, o = (np.asarray(a, float) for a in (p, v, o))
    p_des, v_des, o_des = (np.asarray(a, float) for a in (p_des, v_des, o_des))
    th, ph = _angles(v)
    th_d, ph_d = _angles(v_des)
    al, be = _angles(o)
    al_d, be_d = _angles(o_des)
    s = StrikeScore(
        p_err=float(np.linalg.norm(p - p_des)),
        v_err=abs(float(np.linalg.norm(v) - np.linalg.norm(v_des))),
        beta_err=abs(be - be_d),
        alpha_err=_wrap(al - al_d),
        phi_err=abs(ph - ph_d),
        theta_err=_wrap(th - th_d),
    )
    if v_out_measured is not None and v_out_predicted is not None:
        m = np.asarray(v_out_measured, float)
        q = np.asarray(v_out_predicted, float)
        az_m, el_m = _angles(m)
        az_q, el_q = _angles(q)
        s.exit_mag_err = abs(float(np.linalg.norm(m) - np.linalg.norm(q)))
        s.exit_vert_err = abs(el_m - el_q)
        s.exit_horiz_err = _wrap(az_m - az_q)
        s.exit_dir_err = _angle_between(m, q)
    return s
