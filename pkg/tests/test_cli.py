import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ttswing import ball_dynamics as bd
from ttswing import harness as H
from ttswing.cli import main
from ttswing.config import load_config, parse_config
from ttswing.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ROOT / "configs" / "default.json"


# -- config ---------------------------------------------------------------------------

def test_default_config_matches_builtin_defaults():
    cfg = load_config(DEFAULT)
    sc, ref = cfg.scenario, H.Scenario()
    for k in ("swing", "launcher", "true_aero", "model_aero", "geom", "contact", "sigma", "rate", "delay",
              "n_trials", "ready_q"):
        assert getattr(sc, k) == getattr(ref, k), k
    assert sc.mpc.ocp.to_dict() == parse_config("{}").scenario.mpc.ocp.to_dict()
    assert cfg.arm.to_dict() == parse_config("{}").arm.to_dict()


@pytest.mark.parametrize("text, line, fragment", [
    ('{\n "aero": {\n  "D": 0.1,\n  "Cx": 1\n }\n}', 4, "unknown key 'Cx'"),
    ('{\n "aero": {\n  "D": 0.1,\n  "C_v": 1.7\n }\n}', 4, "C_v"),
    ('{\n "solver": {\n  "N": 50,\n  "mode": "ZZ"\n }\n}', 4, "mode"),
    ('{\n "scenario": {\n  "sigma": 0.001,\n  "bench_streams": 10\n }\n}', 4, "bench_streams"),
    ('{\n "scenario": {\n  "sigma": 0.001,\n }\n}', 4, "invalid JSON"),
    ('{\n "gains": {"Kp": [1, 2]},\n "other": {}\n}', 3, "unknown section"),
])
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "c.json")
    assert ei.value.line == line
    assert fragment in str(ei.value)
    assert str(ei.value).startswith(f"c.json:{line}:")


def test_config_arm_file_reference(tmp_path):
    arm = json.loads((ROOT / "configs" / "arm.json").read_text())
    arm["masses"] = [m * 2 for m in arm["masses"]]
    (tmp_path / "heavy.json").write_text(json.dumps(arm))
    (tmp_path / "c.json").write_text('{"arm": "heavy.json", "scenario": {"swing_type": "chop"}}')
    cfg = load_config(tmp_path / "c.json")
    assert cfg.arm.masses.sum() == pytest.approx(2 * load_config(DEFAULT).arm.masses.sum())
    assert cfg.scenario.swing.name == "chop"


# -- exit codes --------------------------------------------------------------------------

def test_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "solver": {\n  "S_max": 0\n }\n}\n')
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err
    assert main(["bench", "--config", str(tmp_path / "missing.json")]) == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    assert main(["predict", "--observations", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1
    # a ball moving away from the arm never gives a strike point
    assert main(["swing", "--ball", "1,0,0,3,0,0", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


# -- subcommands --------------------------------------------------------------------------

def schema_line(path):
    return Path(path).read_text().splitlines()[0]


def test_fit_params_round_trip(tmp_path, capsys):
    for i in range(3):
        assert main(["flight", "--trial", str(i), "--full", "--seed", "9", "--out", str(tmp_path)]) == 0
    files = sorted(str(p) for p in tmp_path.glob("trajectory_*.csv"))
    assert all(schema_line(f) == "# ttswing-trajectory v1" for f in files)
    flight = bd.read_trajectory_csv(files[0])
    assert flight.bounces and flight.t[0] == 0.0
    assert main(["fit-params", *files, "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    aero = bd.AeroParams()
    assert fit["D"] == pytest.approx(aero.D, rel=0.02)
    assert fit["C_h"] == pytest.approx(aero.C_h, rel=0.02)
    assert fit["C_v"] == pytest.approx(aero.C_v, rel=0.02)


def test_trajectory_csv_round_trip(tmp_path):
    start = bd.BallState(0.0, [2.9, -0.4, -0.15], [-5.5, 0.0, 1.0])
    res = bd.integrate(start, bd.AeroParams(), bd.TableGeometry(), 2.0)
    bd.write_trajectory_csv(tmp_path / "t.csv", res)
    back = bd.read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.t, res.t)
    np.testing.assert_array_equal(back.p, res.p)
    assert back.labels == res.labels
    assert [e.kind for e in back.events] == [e.kind for e in res.events]
    np.testing.assert_array_equal(back.bounces[0].post.v, res.bounces[0].post.v)


def test_predict_writes_stream(tmp_path, capsys):
    assert main(["predict", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert "valid predictions" in capsys.readouterr().out
    for name, head in (("observations.csv", "t,px,py,pz"),
                       ("predictions.csv", "t,valid,t_strike,pdes_x,pdes_y,pdes_z,vx,vy,vz")):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0].startswith("# ttswing-") and lines[1] == head
    # replaying the written observations reproduces the predictions
    again = tmp_path / "again"
    assert main(["predict", "--observations", str(tmp_path / "observations.csv"), "--out", str(again)]) == 0
    assert (again / "predictions.csv").read_bytes() == (tmp_path / "predictions.csv").read_bytes()


def test_swing_drive_smoke(tmp_path, capsys):
    assert main(["swing", "--type", "drive", "--p-des", "0,-0.35,-0.25", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "converged" in out and "NOT" not in out
    d = json.loads((tmp_path / "swing.json").read_text())
    sol, par = d["solution"], d["problem"]["params"]
    rp, rv, ro = sol["residuals"]
    assert rp**2 <= par["eps_p"] and rv**2 <= par["eps_v"] and ro**2 <= par["eps_o"]


def test_mpc_sim_outputs_are_reproducible(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["mpc-sim", "--mode", "sh", "--warm", "on", "--seed", "3", "--out", str(out)]) == 0
        runs.append(out)
    names = sorted(p.name for p in runs[0].iterdir())
    assert names == ["hist_p_err.csv", "mpc_log_0.csv", "plant_0.csv", "scores.csv"]
    for name in names:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
        assert schema_line(runs[0] / name).startswith("# ttswing-")
    rows = list(csv.DictReader((runs[0] / "mpc_log_0.csv").read_text().splitlines()[1:]))
    assert list(rows[0]) == ["t", "solve_ms", "converged", "pdes_x", "pdes_y", "pdes_z", "i_star"]


def test_mpc_sim_scenario_file_and_log_path(tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text('{"scenario": {"swing_type": "drive", "sigma": 0.0}}')
    log = tmp_path / "solves.csv"
    assert main(["mpc-sim", "--scenario", str(sc), "--warm", "off", "--log", str(log), "--out", str(tmp_path)]) == 0
    assert schema_line(log) == "# ttswing-mpc-log v1"
    rows = list(csv.DictReader((tmp_path / "scores.csv").read_text().splitlines()[1:]))
    assert rows[0]["swing_type"] == "drive"


def test_workspace_small_grid(tmp_path):
    assert main(["workspace", "--y", "-0.5", "-0.3", "--z", "-0.3", "-0.2", "--n", "2", "2",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "workspace.csv").read_text().splitlines()
    assert lines[0] == "# ttswing-workspace v1" and lines[1] == "y,z,mean_err_deg,reachable"
    assert len(lines) == 6
