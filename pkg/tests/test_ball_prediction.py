import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttswing.ball_dynamics import AeroParams, BallState, TableGeometry, integrate
from ttswing.ball_prediction import (
    BallEstimator, Observation, StrikePrediction, characterize_errors, estimate_state,
    finite_difference_state, observe_flight, predict_strike, smooth,
)
from ttswing.errors import DegenerateWindow, InvalidParameters, NoPrediction

GEOM = TableGeometry()
START = BallState(0.0, (2.9, -0.4, -0.15), (-5.5, 0.1, 1.6))


def window_from(fn, n=12, t0=0.3, rate=120.0):
    ts = t0 + np.arange(n) / rate
    return [Observation(t, fn(t)) for t in ts]


# -- estimate_state -------------------------------------------------------------

def test_exact_cubic():
    w = window_from(lambda t: np.array([t**3, t**2, t]))
    s = estimate_state(w)
    t = w[-1].t
    np.testing.assert_allclose(s.p, [t**3, t**2, t], atol=1e-12)
    assert np.max(np.abs(s.v - [3 * t**2, 2 * t, 1.0])) <= 1e-9
    assert s.t == t


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=12, max_size=12))
def test_exact_on_degree_three(c):
    C = np.array(c).reshape(4, 3)
    w = window_from(lambda t: C[0] + C[1] * t + C[2] * t**2 + C[3] * t**3)
    t = w[-1].t
    s = estimate_state(w)
    np.testing.assert_allclose(s.v, C[1] + 2 * C[2] * t + 3 * C[3] * t**2, atol=1e-8)


def test_constant_position_has_zero_velocity():
    s = estimate_state(window_from(lambda t: np.array([1.0, -0.2, 0.3])))
    np.testing.assert_allclose(s.v, 0.0, atol=1e-12)


def test_window_errors():
    with pytest.raises(DegenerateWindow):
        estimate_state(window_from(lambda t: np.zeros(3), n=3))
    dup = [Observation(0.1, np.zeros(3))] * 3 + [Observation(0.2, np.ones(3))] * 3
    with pytest.raises(DegenerateWindow):
        estimate_state(dup)
    with pytest.raises(InvalidParameters):
        estimate_state(window_from(lambda t: np.zeros(3), n=30))


def test_cubic_beats_finite_difference_under_noise():
    params = AeroParams()
    truth = integrate(START, params, GEOM, 0.25, dt=1 / 480, stop_at_crossing=False)
    ts = np.arange(0, 0.2, 1 / 120)[:12] + 0.05
    P = truth.positions_at(ts)
    t_new = ts[-1]
    v_true = integrate(START, params, GEOM, t_new, dt=1 / 4800, stop_at_crossing=False).v[-1]
    e_cubic, e_fd = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w = [Observation(t, p + rng.normal(0, 5e-4, 3)) for t, p in zip(ts, P)]
        e_cubic.append(estimate_state(w).v - v_true)
        e_fd.append(finite_difference_state(w).v - v_true)
    rms = lambda e: float(np.sqrt(np.mean(np.sum(np.square(e), axis=1))))
    assert rms(e_cubic) <= 0.15
    assert rms(e_cubic) < rms(e_fd)


# -- predict_strike ---------------------------------------------------------------

def test_state_on_plane_is_its_own_prediction():
    s = BallState(0.7, (0.0, -0.3, -0.2), (-5, 0, 0))
    pred = predict_strike(s, AeroParams(), GEOM)
    assert pred.valid and pred.t_strike == 0.7
    np.testing.assert_array_equal(pred.p_des, s.p)


def test_zero_drag_matches_closed_form_root():
    s = BallState(0.1, (2.0, -0.3, 0.3), (-5.0, 0.4, 1.0))
    pred = predict_strike(s, AeroParams(D=0.0), GEOM, dt=1 / 120)
    g = np.array([0, 0, -9.81])
    # x(t) = x0 + vx t + g_x t^2 / 2 = x_strike
    roots = np.roots([0.5 * g[0], s.v[0], s.p[0] - GEOM.x_strike]) if g[0] else \
        np.array([(GEOM.x_strike - s.p[0]) / s.v[0]])
    tau = float(np.min(roots[roots > 0].real))
    p = s.p + s.v * tau + 0.5 * g * tau**2
    assert pred.valid
    assert abs(pred.t_strike - (s.t + tau)) <= 1e-9
    np.testing.assert_allclose(pred.p_des, p, atol=1e-8)
    assert pred.p_des[0] == GEOM.x_strike


def test_slow_ball_is_invalid():
    pred = predict_strike(BallState(0, (2.5, 2.0, 1.0), (-0.1, 0, 0)), AeroParams(), GEOM, horizon=0.5)
    assert not pred.valid
    behind = predict_strike(BallState(0, (-0.2, 0, 0), (-1, 0, 0)), AeroParams(), GEOM)
    assert not behind.valid


def test_prediction_consistent_along_trajectory():
    params = AeroParams()
    res = integrate(START, params, GEOM, 2.0)
    first = predict_strike(START, params, GEOM)
    for k in (20, len(res.t) // 2, len(res.t) - 5):
        later = predict_strike(BallState(res.t[k], res.p[k], res.v[k]), params, GEOM)
        np.testing.assert_allclose(later.p_des, first.p_des, atol=1e-6)
        assert abs(later.t_strike - first.t_strike) <= 1e-6


# -- smooth -------------------------------------------------------------------------

def _pred(p, t=0.5, valid=True):
    return StrikePrediction(np.asarray(p, float), t, np.zeros(3), valid)


def test_smooth_identical_and_alternating():
    same = [_pred([0.0, -0.3, -0.2], 0.7)] * 10
    out = smooth(same)
    np.testing.assert_allclose(out.p_des, [0.0, -0.3, -0.2], atol=1e-15)
    assert out.t_strike == pytest.approx(0.7, abs=1e-15)
    alt = [_pred([0.0, a, 0.0]) for a in [0.05, -0.05] * 5]
    assert smooth(alt).p_des[1] == pytest.approx(0.0, abs=1e-15)


def test_smooth_short_history_and_invalid_entries():
    hist = [_pred([0, 0.1, 0]), _pred([9, 9, 9], valid=False), _pred([0, 0.3, 0])]
    assert smooth(hist).p_des[1] == pytest.approx(0.2)
    with pytest.raises(NoPrediction):
        smooth([_pred([0, 0, 0], valid=False)])
    with pytest.raises(NoPrediction):
        smooth([])


def test_smooth_uses_last_ten():
    hist = [_pred([0, 100.0, 0])] + [_pred([0, 1.0, 0])] * 10
    assert smooth(hist).p_des[1] == 1.0


def test_smooth_variance_reduction():
    rng = np.random.default_rng(0)
    sigma = 0.01
    outs = [smooth([_pred(rng.normal(0, sigma, 3)) for _ in range(10)]).p_des for _ in range(1000)]
    std = np.std(np.array(outs), axis=0)
    np.testing.assert_allclose(std, sigma / np.sqrt(10), rtol=0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2)),
                min_size=1, max_size=15))
def test_smooth_within_convex_hull(items):
    hist = [_pred(x[:3], x[3]) for x in items]
    out = smooth(hist)
    P = np.array([h.p_des for h in hist[-10:]])
    T = np.array([h.t_strike for h in hist[-10:]])
    assert np.all(out.p_des >= P.min(axis=0) - 1e-12) and np.all(out.p_des <= P.max(axis=0) + 1e-12)
    assert T.min() - 1e-12 <= out.t_strike <= T.max() + 1e-12


# -- estimator stream ---------------------------------------------------------------

def test_estimator_rejects_out_of_order():
    est = BallEstimator(AeroParams(), GEOM)
    est.update(Observation(0.1, np.zeros(3) + [2, 0, 0]))
    with pytest.raises(InvalidParameters):
        est.update(Observation(0.1, np.zeros(3) + [2, 0, 0]))


def test_estimator_detects_bounce_and_predicts_on_plane():
    params = AeroParams()
    flight = observe_flight(START, params, GEOM, np.random.default_rng(1))
    assert flight.valid and flight.t_bounce is not None
    est = BallEstimator(params, GEOM)
    preds = [est.update(o) for o in flight.observations]
    assert est.bounced
    last = preds[-1]
    assert last.valid and last.p_des[0] == GEOM.x_strike
    assert np.linalg.norm(last.p_des - flight.p_strike) < 0.01


def test_exact_mode_matched_model_is_exact():
    params = AeroParams()
    tab = characterize_errors([START, BallState(0, (2.85, -0.3, -0.1), (-5.2, -0.2, 1.8))],
                              params, params, GEOM, sigma=0.0, mode="exact")
    assert len(tab.records) > 50
    assert tab.records[:, 1].max() <= 1e-6


def test_noiseless_strike_time_error_does_not_grow_after_bounce():
    params = AeroParams()
    tab = characterize_errors([START], params, params, GEOM, sigma=0.0)
    R = tab.records
    before, after = R[R[:, 3] == 0], R[R[:, 3] == 1]
    assert len(after) > 5
    assert after[:, 2].max() <= before[:, 2].max()


def test_observe_flight_dropout_and_rate():
    flight = observe_flight(START, AeroParams(), GEOM, np.random.default_rng(3), dropout=0.3)
    full = observe_flight(START, AeroParams(), GEOM, np.random.default_rng(3))
    assert len(flight.observations) < len(full.observations)
    dts = np.diff([o.t for o in full.observations])
    np.testing.assert_allclose(dts, 1 / 120, atol=1e-9)
