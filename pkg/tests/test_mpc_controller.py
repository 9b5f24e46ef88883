import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttswing import arm_model as am
from ttswing import mpc_controller as mc
from ttswing import swing_ocp as so
from ttswing.ball_prediction import StrikePrediction
from ttswing.collision_model import swing_type
from ttswing.errors import InvalidParameters

ARM = am.default_arm()
READY = am.JointState.rest(np.zeros(5))
LOOP = swing_type("loop")
P = np.array([0.0, -0.35, -0.25])
CFG = mc.MpcConfig()


def pred(p=P, t_strike=1.0):
    return StrikePrediction(np.asarray(p, float), t_strike, np.array([-5.0, 0.0, 0.0]), True)


@pytest.fixture(scope="module")
def first():
    res = mc.replan(ARM, 0.3, READY, READY, pred(), LOOP, None, CFG)
    assert res.status == "converged"
    return res


# -- config ---------------------------------------------------------------------------

def test_config_derived_sizes():
    assert CFG.N_i == 250
    assert CFG.blend_nodes == 10
    assert mc.MpcConfig(T_swing=0.3).N_i == 150


@pytest.mark.parametrize("kw", [dict(blend_duration=0.001), dict(S_max=0), dict(mode="VH"),
                                dict(sh_warm="copy"), dict(interp_dt=0.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidParameters):
        mc.MpcConfig(**kw)


# -- select_index -----------------------------------------------------------------------

def test_select_index_examples():
    N = CFG.N_i
    assert mc.select_index(1.0, 1.0, CFG, N - 1) == N
    assert mc.select_index(0.5, 1.0, CFG, 0) == 0
    assert mc.select_index(0.8, 1.0, CFG, 0) == CFG.S_max
    assert mc.select_index(0.8, 1.0, CFG, 140) == 143
    assert mc.select_index(0.8, 1.0, CFG, 148) == 150
    # late plan: hold instead of stepping back
    assert mc.select_index(0.6, 1.0, CFG, 120) == 120
    # before the swing starts the raw index is negative
    assert mc.select_index(0.2, 1.0, CFG, 0) == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 250))
def test_select_index_is_monotone_and_bounded(t1, t2, i_prev):
    lo, hi = sorted((t1, t2))
    a = mc.select_index(lo, 1.0, CFG, i_prev)
    b = mc.select_index(hi, 1.0, CFG, i_prev)
    assert i_prev <= a <= b <= min(i_prev + CFG.S_max, CFG.N_i) or a == b == i_prev == CFG.N_i


def test_executed_index_reaches_strike_node_on_time():
    i = 0
    for k in range(501):
        i = mc.select_index(k * 0.002, 1.0, CFG, i)
    assert i == CFG.N_i


# -- interpolation and blending -----------------------------------------------------------

def test_plan_grid(first):
    plan = first.plan
    assert plan.n_nodes == CFG.N_i + 1
    np.testing.assert_allclose(np.diff(plan.times()), CFG.interp_dt, atol=1e-12)
    assert plan.times()[-1] == 1.0
    sol = first.solution
    np.testing.assert_allclose(plan.q[-1], sol.q[:, -1], atol=1e-12)
    np.testing.assert_allclose(plan.q[::5], sol.q.T, atol=1e-12)
    # stored accelerations are interval means, so they integrate qd exactly
    np.testing.assert_allclose(plan.qd[:-1] + CFG.interp_dt * plan.qdd[:-1], plan.qd[1:], atol=1e-9)


def test_smoothstep_endpoints():
    s, ds, dds = mc.smoothstep([0.0, 1.0])
    np.testing.assert_array_equal(s, [0.0, 1.0])
    np.testing.assert_array_equal(ds, 0.0)
    np.testing.assert_array_equal(dds, 0.0)
    u = np.linspace(0, 1, 101)
    assert np.all(np.diff(mc.smoothstep(u)[0]) >= 0)


def test_blend_of_identical_plans_is_identity(first):
    out = mc.blend(first.plan, first.plan, 0.7, CFG)
    np.testing.assert_array_equal(out.q, first.plan.q)
    np.testing.assert_array_equal(out.qd, first.plan.qd)
    np.testing.assert_array_equal(out.qdd, first.plan.qdd)


@pytest.fixture(scope="module")
def shifted(first):
    res = mc.replan(ARM, 0.7, READY, READY, pred(P + [0.0, 0.05, 0.0]), LOOP, first.solution, CFG)
    assert res.status == "converged"
    return res


def test_blend_endpoints(first, shifted):
    old, new = first.plan, shifted.plan
    k0 = 100
    out = mc.blend(old, new, new.times()[k0], CFG)
    for a, b in ((out.q, old.q), (out.qd, old.qd)):
        np.testing.assert_array_equal(a[: k0 + 1], b[: k0 + 1])
    # the acceleration held from the switch node already starts the ramp
    np.testing.assert_array_equal(out.qdd[:k0], old.qdd[:k0])
    end = k0 + CFG.blend_nodes
    for a, b in ((out.q, new.q), (out.qd, new.qd), (out.qdd, new.qdd)):
        np.testing.assert_array_equal(a[end:], b[end:])
    assert not out.blend_clipped


def test_blend_window_past_strike_is_clipped(first, shifted):
    out = mc.blend(first.plan, shifted.plan, shifted.plan.times()[-4], CFG)
    assert out.blend_clipped
    np.testing.assert_array_equal(out.q[:-3], first.plan.q[:-3])


def test_blend_has_no_acceleration_impulse(first, shifted):
    h = CFG.interp_dt
    old, new = first.plan, shifted.plan
    k0 = 100

    def accel_jump(q):
        return np.abs(np.diff(np.diff(q, 2, axis=0) / h**2, axis=0)).max()

    blended = mc.blend(old, new, new.times()[k0], CFG)
    hard = np.vstack([old.q[: k0 + 1], new.q[k0 + 1:]])
    assert np.abs(new.q - old.q).max() > 0.05
    assert accel_jump(blended.q) <= 0.05 * accel_jump(hard)
    # held accelerations integrate each setpoint velocity into the next one
    np.testing.assert_allclose(blended.qd[:-1] + h * blended.qdd[:-1], blended.qd[1:], atol=1e-9)


# -- replanning -----------------------------------------------------------------------------

def test_fh_fixed_point(first):
    again = mc.replan(ARM, 0.35, READY, READY, pred(), LOOP, first.solution, CFG)
    assert again.status == "converged"
    for a, b in ((again.plan.q, first.plan.q), (again.plan.qd, first.plan.qd),
                 (again.plan.qdd, first.plan.qdd)):
        assert np.abs(a - b).max() <= 1e-9


@pytest.mark.parametrize("mode", ["FH", "SH"])
def test_target_shift_mid_swing_meets_terminal_tolerance(first, mode):
    cfg = mc.MpcConfig(mode=mode)
    node = first.plan.node(125)
    current = am.JointState(node[0], node[1])
    target = P + [0.03, 0.0, 0.0]
    res = mc.replan(ARM, 0.75, current, READY, pred(target), LOOP, first.solution, cfg)
    assert res.status == "converged"
    eps_p = so.OcpParams(np.zeros(5), np.zeros(5)).eps_p
    assert np.sum((am.fk_paddle(ARM, res.plan.q[-1]) - target) ** 2) <= eps_p
    if mode == "SH":
        np.testing.assert_allclose(res.plan.q[125], current.q, atol=1e-12)


def test_sh_halved_remaining_time_halves_dt(first):
    cfg = mc.MpcConfig(mode="SH")
    dts, sizes = [], []
    for t in (0.6, 0.8):
        node = first.plan.node(first.plan.index_at(t))
        res = mc.replan(ARM, t, am.JointState(node[0], node[1]), READY, pred(), LOOP, first.solution, cfg)
        assert res.status == "converged"
        dts.append(res.solution.dt)
        sizes.append(res.solution.qdd.shape)
    assert dts[1] == pytest.approx(dts[0] / 2, rel=1e-12)
    assert sizes[0] == sizes[1] == (5, cfg.N)


def test_sh_before_swing_start_matches_fh(first):
    res = mc.replan(ARM, 0.3, READY, READY, pred(), LOOP, None, mc.MpcConfig(mode="SH"))
    np.testing.assert_array_equal(res.plan.q, first.plan.q)


def test_replan_holds_near_strike(first):
    res = mc.replan(ARM, 0.997, READY, READY, pred(), LOOP, first.solution, CFG)
    assert res.status == "hold" and res.plan is None


def test_invalid_prediction_is_rejected():
    bad = StrikePrediction(P, 1.0, np.zeros(3), False)
    with pytest.raises(InvalidParameters):
        mc.replan(ARM, 0.3, READY, READY, bad, LOOP, None, CFG)


def test_failed_solve_keeps_previous_plan(first):
    ctrl = mc.MpcController(ARM, READY, LOOP, CFG)
    ctrl.on_prediction(0.3, pred(), READY)
    kept = ctrl.plan
    rec = ctrl.on_prediction(0.31, pred([0.0, -3.0, 0.0]), READY)  # far out of reach
    assert not rec.converged
    assert ctrl.plan is kept
    assert ctrl.convergence_ratio == 0.5


# -- simulated runs -----------------------------------------------------------------------

def stream(targets, t0=0.30, rate=120.0):
    return [(t0 + k / rate, pred(p)) for k, p in enumerate(targets)]


def test_setpoint_stream_spacing_and_continuity():
    rng = np.random.default_rng(3)
    targets = P + rng.normal(0, 0.01, (60, 3))
    run = mc.simulate_mpc(ARM, READY, LOOP, stream(targets), CFG, t_end=1.0)
    np.testing.assert_allclose(np.diff(run.t), CFG.interp_dt, atol=1e-12)
    assert run.attempts == 60
    assert np.all(np.diff(run.i_star) >= 0)
    assert np.all(np.diff(run.i_star) <= CFG.S_max)
    assert run.i_star[-1] == CFG.N_i
    # executed positions never jump by more than a fast swing covers in one tick
    assert np.abs(np.diff(run.setpoints[:, 0], axis=0)).max() < 0.2


def test_fixed_stream_fh_converges_in_one_iteration():
    run = mc.simulate_mpc(ARM, READY, LOOP, stream([P] * 40), CFG, t_end=1.0)
    assert run.converged == run.attempts == 40
    assert all(r.iterations <= 1 for r in run.records[1:])


def test_solve_log_csv(tmp_path):
    run = mc.simulate_mpc(ARM, READY, LOOP, stream([P] * 5), CFG, t_end=0.4)
    path = tmp_path / "solves.csv"
    mc.write_solve_log(path, run.records, "ttswing-solves v1")
    lines = path.read_text().splitlines()
    assert lines[0] == "# ttswing-solves v1"
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ["t", "solve_ms", "converged", "pdes_x", "pdes_y", "pdes_z", "i_star"]
    assert len(rows) == 5 and rows[0]["solve_ms"] == ""
    assert float(rows[0]["pdes_y"]) == P[1]
    mc.write_solve_log(path, run.records, "ttswing-solves v1", timing=True)
    rows = list(csv.DictReader(path.read_text().splitlines()[1:]))
    assert float(rows[0]["solve_ms"]) > 0
