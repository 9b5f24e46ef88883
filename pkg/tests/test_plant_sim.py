import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from ttswing import arm_model as am
from ttswing import swing_ocp as so
from ttswing.collision_model import SwingSpec, spec_to_terminal, swing_type
from ttswing.errors import InvalidParameters
from ttswing.plant_sim import (
    CONTROL_DT, PdGains, PlantState, control_torque, run_closed_loop, sat_bits, step_plant,
)

ARM = am.default_arm()
P_STRIKE = np.array([0.0, -0.35, -0.25])


def rest_state(q=None):
    q = np.zeros(5) if q is None else np.asarray(q, float)
    return PlantState(0.0, q, np.zeros_like(q))


def plan(kind="drive", p=P_STRIKE, spec=None):
    v, o = spec_to_terminal(spec or swing_type(kind))
    prob = so.build(ARM, so.OcpParams(np.zeros(5), np.zeros(5)), so.TerminalSpec(p, v, o))
    return prob, so.solve(prob)


def spline_setpoints(sol, T):
    ts = np.linspace(0.0, T, sol.q.shape[1])
    sp = CubicSpline(ts, sol.q.T, bc_type=((1, sol.qd[:, 0]), (1, sol.qd[:, -1])))

    def fn(t, _state):
        a, b = min(t, T), min(t + CONTROL_DT, T)
        # mean acceleration over the hold interval
        qdd = (sp(b, 1) - sp(a, 1)) / CONTROL_DT if b > a else np.zeros(5)
        return sp(a), sp(a, 1), qdd
    return fn


# -- control_torque ---------------------------------------------------------------

def test_static_setpoint_gives_gravity_compensation():
    q = np.array([0.3, -0.2, 0.5, 1.0, 0.1])
    st0 = PlantState(0, q, np.zeros(5))
    u, sat = control_torque(ARM, st0, (q, np.zeros(5), np.zeros(5)), PdGains())
    np.testing.assert_allclose(u, -am.gravity_vector(ARM, q), atol=1e-12)
    assert not sat.any()


def test_zero_gains_give_feedforward_only():
    rng = np.random.default_rng(0)
    q, qd, qd_des, q_des, qdd = rng.normal(size=(5, 5))
    u, _ = control_torque(ARM, PlantState(0, q, qd), (q_des, qd_des, qdd), PdGains.zero())
    M, C, tg = am.dynamics_terms(ARM, q, qd)
    np.testing.assert_allclose(u, M @ qdd + C - tg, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_control_torque_recomposition(seed):
    rng = np.random.default_rng(seed)
    q, qd, q_des, qd_des = rng.uniform(-1.5, 1.5, (4, 5))
    qdd = rng.normal(0, 5, 5)
    g = PdGains(rng.uniform(0, 300, 5), rng.uniform(0, 10, 5), rng.uniform(1, 40, 5))
    u, sat = control_torque(ARM, PlantState(0, q, qd), (q_des, qd_des, qdd), g)
    M, C, tg = am.dynamics_terms(ARM, q, qd)
    raw = M @ qdd + C - tg + g.Kp * (q_des - q) + g.Kd * (qd_des - qd)
    np.testing.assert_allclose(u, np.clip(raw, -g.torque_limits, g.torque_limits), atol=1e-9)
    np.testing.assert_array_equal(sat, np.abs(raw) > g.torque_limits)


def test_gain_validation():
    with pytest.raises(InvalidParameters):
        PdGains(Kp=-np.ones(5))
    with pytest.raises(InvalidParameters):
        PdGains(torque_limits=np.zeros(5))
    with pytest.raises(InvalidParameters):
        step_plant(ARM, rest_state(), np.zeros(5), 0.0)


def test_sat_bits():
    assert sat_bits([True, False, False, False, True]) == 17
    assert sat_bits(np.zeros(5, bool)) == 0


# -- step_plant -----------------------------------------------------------------------

def test_gravity_compensation_is_an_equilibrium():
    q = np.array([0.4, 0.3, -0.6, 1.2, -0.5])
    s = PlantState(0, q, np.zeros(5))
    u = -am.gravity_vector(ARM, q)
    for _ in range(2000):
        s = step_plant(ARM, s, u, 5e-4)
    np.testing.assert_allclose(s.q, q, atol=1e-10)
    np.testing.assert_allclose(s.qd, 0.0, atol=1e-10)
    assert s.t == pytest.approx(1.0)


def test_kinetic_energy_conserved_without_gravity_or_torque():
    free = am.ArmParams.from_dict({**ARM.to_dict(), "gravity": [0.0, 0.0, 0.0]})
    s = PlantState(0, [0.2, -0.3, 0.4, 1.0, 0.2], [2.0, -1.5, 3.0, -2.0, 4.0])
    e0 = am.kinetic_energy(free, s.q, s.qd)
    worst = 0.0
    for _ in range(2000):
        s = step_plant(free, s, np.zeros(5), 5e-4)
        worst = max(worst, abs(am.kinetic_energy(free, s.q, s.qd) - e0) / e0)
    assert worst <= 1e-6


# -- closed loop ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["drive", "loop", "chop"])
def test_matched_model_tracks_plan_within_a_milliradian(kind):
    prob, sol = plan(kind)
    assert sol.converged
    T = prob.params.T
    log = run_closed_loop(ARM, spline_setpoints(sol, T), rest_state(), T + CONTROL_DT, t_strike=T)
    assert log.tracking_error().max() <= 1e-3
    assert not log.saturated
    assert np.linalg.norm(log.strike.p - am.fk_paddle(ARM, sol.q[:, -1])) <= 0.01
    assert log.strike.t == pytest.approx(T)


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_mass_mismatch_stays_within_paddle_radius(factor):
    prob, sol = plan("loop")
    T = prob.params.T
    log = run_closed_loop(ARM.scaled_mass(factor), spline_setpoints(sol, T), rest_state(), T + CONTROL_DT,
                          model_arm=ARM, t_strike=T)
    assert np.linalg.norm(log.strike.p - am.fk_paddle(ARM, sol.q[:, -1])) <= 0.075
    assert np.linalg.norm(log.strike.p - P_STRIKE) <= 0.075


def test_infeasible_speed_saturates_without_crashing():
    prob, sol = plan(spec=SwingSpec(speed=20.0))
    T = prob.params.T
    log = run_closed_loop(ARM, spline_setpoints(sol, T), rest_state(), T + CONTROL_DT, t_strike=T)
    assert log.saturated
    assert np.all(np.isfinite(np.array(log.q)))
    assert log.tracking_error().max() > 1e-3
    assert np.all(np.abs(np.array(log.u)) <= PdGains().torque_limits + 1e-12)


def test_log_files(tmp_path):
    prob, sol = plan()
    T = prob.params.T
    log = run_closed_loop(ARM, spline_setpoints(sol, T), rest_state(), T + CONTROL_DT, t_strike=T)
    log.write_csv(tmp_path / "log.csv", "ttswing-plant-log v1")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "# ttswing-plant-log v1"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == len(log.t)
    assert list(rows[0])[:2] == ["t", "q1"] and list(rows[0])[-1] == "sat_mask"
    assert float(rows[10]["q3"]) == log.q[10][2]
    log.write_strike_json(tmp_path / "strike.json")
    snap = json.loads((tmp_path / "strike.json").read_text())
    assert snap["t"] == pytest.approx(T)
    np.testing.assert_allclose(snap["p"], log.strike.p)
