"""Command line entry point: ``ttswing <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import arm_model as am
from . import ball_dynamics as bd
from . import ball_prediction as bp
from . import harness as H
from . import swing_ocp as so
from .collision_model import spec_to_terminal, swing_type
from .config import RunConfig, load_config
from .errors import ConfigError, NoPrediction, TTSwingError
from .mpc_controller import write_solve_log


def _schema(kind: str) -> str:
    return H.SCHEMA.format(kind=kind)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vec(text, n=3):
    vals = [float(x) for x in text.split(",")]
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
    return np.array(vals)


def _vec6(text):
    return _vec(text, 6)


# -- subcommands ----------------------------------------------------------------------

def cmd_flight(cfg: RunConfig, args) -> int:
    sc = cfg.scenario
    start = H.sample_launch(sc.launcher, sc.true_aero, sc.geom, np.random.default_rng([sc.seed, args.trial]))
    res = bd.integrate(start, sc.true_aero, sc.geom, args.horizon, stop_at_crossing=not args.full)
    path = _out(args) / f"trajectory_{args.trial}.csv"
    bd.write_trajectory_csv(path, res, _schema("trajectory"))
    print(f"{path}: {len(res.t)} samples, {len(res.bounces)} bounce(s), status {res.status}")
    return 0


def cmd_fit_params(cfg: RunConfig, args) -> int:
    flights = [bd.read_trajectory_csv(p) for p in args.trajectories]
    drag = bd.fit_drag([(t, p) for f in flights for t, p, _ in f.segments()], g=cfg.aero.g)
    pairs = [(e.pre.v, e.post.v) for f in flights for e in f.bounces]
    out = {"D": drag.D, "drag_residual": drag.residual, "drag_samples": drag.n_samples}
    print(f"D   = {drag.D:.6g} 1/m  (rms residual {drag.residual:.3g} m/s^2, {drag.n_samples} samples)")
    if pairs:
        b = bd.fit_bounce(pairs)
        out.update(C_h=b.C_h, C_v=b.C_v, bounce_pairs=len(pairs))
        print(f"C_h = {b.C_h:.6g}\nC_v = {b.C_v:.6g}  ({len(pairs)} bounce pair(s))")
    else:
        print("no bounces in the input; C_h and C_v not fitted")
    path = _out(args) / "fit.json"
    path.write_text(json.dumps({"schema": _schema("fit"), **out}, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    sc = cfg.scenario
    out = _out(args)
    truth = None
    if args.observations:
        obs = bp.read_observations_csv(args.observations)
    else:
        rng = np.random.default_rng([sc.seed, args.trial])
        start = H.sample_launch(sc.launcher, sc.true_aero, sc.geom, rng)
        flight = bp.observe_flight(start, sc.true_aero, sc.geom, rng, sc.sigma, rate=sc.rate)
        obs = flight.observations
        truth = flight
        bp.write_observations_csv(out / "observations.csv", obs, _schema("observations"))
    est = bp.BallEstimator(sc.model_aero, sc.geom)
    rows = []
    for o in obs:
        p = est.update(o)
        rows.append((o.t, p if p is not None else bp.StrikePrediction.invalid(o.t)))
    bp.write_predictions_csv(out / "predictions.csv", rows, _schema("predictions"))
    valid = [p for _, p in rows if p.valid]
    print(f"{len(obs)} observations, {len(valid)} valid predictions")
    if valid:
        last = valid[-1]
        print("final p_des = (%.4f, %.4f, %.4f) m at t_strike = %.4f s" % (*last.p_des, last.t_strike))
        if truth is not None and truth.valid:
            print("error vs truth: %.2f mm, %.2f ms" % (1e3 * np.linalg.norm(last.p_des - truth.p_strike),
                                                       1e3 * (last.t_strike - truth.t_strike)))
    return 0


def cmd_swing(cfg: RunConfig, args) -> int:
    sc = cfg.scenario
    spec = swing_type(args.type, args.speed if args.speed is not None else sc.swing.speed,
                      args.T if args.T is not None else sc.swing.T_swing)
    if args.p_des is not None:
        p_des = args.p_des
    else:
        ball = bd.BallState(0.0, args.ball[:3], args.ball[3:])
        pred = bp.predict_strike(ball, sc.model_aero, sc.geom)
        if not pred.valid:
            raise NoPrediction("the ball never reaches the strike plane")
        p_des = pred.p_des
        print("ball crosses the strike plane at (%.4f, %.4f, %.4f) m, t = %.4f s" % (*p_des, pred.t_strike))
    v_des, o_des = spec_to_terminal(spec)
    tmpl = sc.mpc.ocp
    params = replace(tmpl, dt=spec.T_swing / tmpl.N).with_initial(sc.ready.q, sc.ready.qd)
    prob = so.build(cfg.arm, params, so.TerminalSpec(p_des, v_des, o_des))
    sol = so.solve(prob)
    path = _out(args) / "swing.json"
    path.write_text(so.dump_json(prob, sol) + "\n")
    r = sol.residuals
    print(f"swing '{spec.name}': {'converged' if sol.converged else 'NOT converged'} "
          f"({sol.status}) in {sol.iterations} iteration(s)")
    # tolerances are on squared norms
    print(f"  position residual    {r[0]:.4g} m    (limit {params.eps_p ** 0.5:.4g})")
    print(f"  velocity residual    {r[1]:.4g} m/s  (limit {params.eps_v ** 0.5:.4g})")
    print(f"  orientation residual {r[2]:.4g}      (limit {params.eps_o ** 0.5:.4g})")
    print(f"  cost {sol.cost:.6g}, dt {sol.dt:.4g} s x {params.N} nodes")
    return 0 if sol.converged else 1


def cmd_mpc_sim(cfg: RunConfig, args) -> int:
    if args.scenario:
        cfg = load_config(args.scenario).with_seed(args.seed)
    sc = cfg.scenario
    mpc = sc.mpc
    if args.mode:
        mpc = replace(mpc, mode=args.mode.upper())
    if args.warm:
        mpc = replace(mpc, warm_start=args.warm == "on")
    sc = replace(sc, mpc=mpc)
    out = _out(args)
    results = []
    n = args.trials if args.trials is not None else 1
    for i in range(n):
        res, mrun = H.execute_trial(sc, i, cfg.arm)
        results.append(res)
        if mrun is None:
            continue
        log_path = Path(args.log) if (args.log and n == 1) else out / f"mpc_log_{i}.csv"
        write_solve_log(log_path, mrun.records, _schema("mpc-log"), timing=args.timing)
        mrun.log.write_csv(out / f"plant_{i}.csv", _schema("plant-log"))
    report = H.TrialReport(sc, results)
    H.write_scores_csv(out / "scores.csv", results)
    H.write_histogram_csv(out / "hist_p_err.csv", report, "p_err", np.linspace(0.0, 0.15, 16))
    s = report.summary()
    print(f"mpc-sim {mpc.mode} warm={'on' if mpc.warm_start else 'off'} swing={s['swing_type']}: "
          f"{s['trials']} trial(s), hit rate {100 * s['hit_rate']:.1f}%, "
          f"convergence {100 * s['convergence_ratio']:.1f}%, "
          f"exit within 2 m/s & 10 deg {100 * s['exit_within_2mps_10deg']:.1f}%")
    if s["failures"]:
        print("failures: " + ", ".join(f"{k} x{v}" for k, v in sorted(s["failures"].items())))
    return 0


def cmd_workspace(cfg: RunConfig, args) -> int:
    ys = np.linspace(args.y[0], args.y[1], args.n[0])
    zs = np.linspace(args.z[0], args.z[1], args.n[1])
    cells = am.workspace_sweep(cfg.arm, ys, zs, x_plane=cfg.geom.x_strike)
    path = _out(args) / "workspace.csv"
    am.write_workspace_csv(path, cells, _schema("workspace"))
    reach = sum(c.reachable for c in cells)
    print(f"{path}: {reach}/{len(cells)} cells reachable, "
          f"mean orientation error {np.mean([c.mean_err_deg for c in cells]):.2f} deg")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    sc = cfg.scenario
    n = args.streams if args.streams is not None else cfg.bench_streams
    runs = H.bench_streams(sc, n)
    report = H.bench_mpc(runs, sc.swing, sc.mpc, cfg.arm, sc.ready)
    out = _out(args)
    # bench.csv stays byte-reproducible; wall-clock columns go to a side file
    report.write_csv(out / "bench.csv")
    if args.timing:
        report.write_csv(out / "bench_timing.csv", timing=True)
    print(report.text(timing=args.timing))
    return 0


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults built in)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock solve times in CSV output (not reproducible)")
    ap = argparse.ArgumentParser(prog="ttswing", description="Table-tennis swing planning toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flight", parents=[common], help="simulate one launch and write its trajectory CSV")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--horizon", type=float, default=2.0)
    p.add_argument("--full", action="store_true", help="keep integrating past the strike plane")
    p.set_defaults(fn=cmd_flight)

    p = sub.add_parser("fit-params", parents=[common], help="fit D, C_h, C_v from trajectory CSVs")
    p.add_argument("trajectories", nargs="+")
    p.set_defaults(fn=cmd_fit_params)

    p = sub.add_parser("predict", parents=[common], help="observation stream to prediction CSV")
    p.add_argument("--observations", help="CSV t,px,py,pz; simulated from the scenario when omitted")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("swing", parents=[common], help="solve one swing from the ready pose")
    p.add_argument("--type", default="drive", choices=["loop", "chop", "drive"])
    p.add_argument("--speed", type=float)
    p.add_argument("--T", type=float, help="swing duration (s)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--p-des", type=_vec, help="strike point x,y,z")
    g.add_argument("--ball", type=_vec6, help="ball state px,py,pz,vx,vy,vz (strike point is predicted)")
    p.set_defaults(fn=cmd_swing)

    p = sub.add_parser("mpc-sim", parents=[common], help="closed-loop trials with the replanning controller")
    p.add_argument("--mode", choices=["fh", "sh"])
    p.add_argument("--warm", choices=["on", "off"])
    p.add_argument("--scenario", help="config file for this run (replaces --config)")
    p.add_argument("--trials", type=int)
    p.add_argument("--log", help="solve log CSV path (single trial)")
    p.set_defaults(fn=cmd_mpc_sim)

    p = sub.add_parser("workspace", parents=[common], help="orientation-error map over the strike plane")
    p.add_argument("--y", type=float, nargs=2, default=(-0.8, 0.2), metavar=("LO", "HI"))
    p.add_argument("--z", type=float, nargs=2, default=(-0.6, 0.3), metavar=("LO", "HI"))
    p.add_argument("--n", type=int, nargs=2, default=(11, 10), metavar=("NY", "NZ"))
    p.set_defaults(fn=cmd_workspace)

    p = sub.add_parser("bench", parents=[common], help="FH/SH convergence benchmark")
    p.add_argument("--streams", type=int, help="number of prediction streams (>= 50)")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_seed(args.seed)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"ttswing: config error: {exc}", file=sys.stderr)
        return 2
    except (TTSwingError, OSError) as exc:
        print(f"ttswing: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
