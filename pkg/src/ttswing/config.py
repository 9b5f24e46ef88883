"""JSON run configuration.

Sections (all optional): ``arm`` (inline ArmParams fields, or a path to an
arm JSON file relative to the config), ``aero``, ``table``, ``scenario``,
``solver`` and ``gains``.  Unknown keys and invalid values raise
:class:`ConfigError` pointing at the offending line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import arm_model as am
from . import swing_ocp as so
from .ball_dynamics import AeroParams, TableGeometry
from .collision_model import ContactParams, swing_type
from .errors import ConfigError, TTSwingError
from .harness import Launcher, Scenario
from .mpc_controller import MpcConfig
from .plant_sim import PdGains

SECTIONS = ("arm", "aero", "table", "scenario", "solver", "gains")
SCENARIO_KEYS = {"swing_type", "speed", "T_swing", "n_trials", "sigma", "rate", "delay", "mass_factor",
                 "torque_noise", "ready_q", "launcher", "model_aero", "contact", "bench_streams"}
MPC_KEYS = {"mode", "blend_duration", "S_max", "interp_dt", "warm_start", "cold_init", "sh_warm"}
OCP_KEYS = {"N", "w_a", "w_v", "eps_p", "eps_v", "eps_o", "max_iter_cold", "max_iter_warm", "tol", "reg"}


@dataclass
class RunConfig:
    arm: am.ArmParams = field(default_factory=am.default_arm)
    scenario: Scenario = field(default_factory=Scenario)
    bench_streams: int = 50
    source: str | None = None

    @property
    def aero(self) -> AeroParams:
        return self.scenario.true_aero

    @property
    def geom(self) -> TableGeometry:
        return self.scenario.geom

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, scenario=replace(self.scenario, seed=int(seed)))


def _line_of(text: str, keys) -> int | None:
    """Line of the last key in ``keys``, searching for each in turn after the
    previous one.  Good enough for the nested-object layout of a config."""
    pos = 0
    found = None
    for k in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(str(k))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        found = m.start()
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


class _Ctx:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path

    def fail(self, msg: str, *keys):
        raise ConfigError(msg, _line_of(self.text, keys) if keys else None, self.path)

    def section(self, d, name, allowed):
        sec = d.get(name, {})
        if not isinstance(sec, dict):
            self.fail(f"section '{name}' must be an object", name)
        for k in sec:
            if k not in allowed:
                self.fail(f"unknown key '{k}' in section '{name}'", name, k)
        return sec

    def build(self, fn, keys, *args, **kw):
        try:
            return fn(*args, **kw)
        except (TTSwingError, TypeError, ValueError) as exc:
            msg = str(exc)
            # point at the field the message names, when it names one
            named = [k for k in kw if re.search(r"\b%s\b" % re.escape(k), msg)]
            if named and len(keys) == 1:
                keys = (*keys, named[0])
            self.fail(msg, *keys)


def _names(cls):
    return {f.name for f in fields(cls)}


def parse_config(text: str, path: str | None = None, base_dir: Path | None = None) -> RunConfig:
    ctx = _Ctx(text, path)
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    if not isinstance(d, dict):
        ctx.fail("top level must be an object")
    for k in d:
        if k not in SECTIONS:
            ctx.fail(f"unknown section '{k}'", k)

    arm = am.default_arm()
    if "arm" in d:
        spec = d["arm"]
        if isinstance(spec, str):
            p = (base_dir or Path(".")) / spec
            try:
                spec = json.loads(p.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                ctx.fail(f"cannot read arm file {str(p)!r}: {exc}", "arm")
        if not isinstance(spec, dict):
            ctx.fail("section 'arm' must be an object or a file path", "arm")
        arm = ctx.build(am.ArmParams.from_dict, ("arm",), spec)

    aero_d = ctx.section(d, "aero", _names(AeroParams))
    aero = ctx.build(AeroParams, ("aero",), **aero_d)
    table_d = ctx.section(d, "table", _names(TableGeometry))
    geom = ctx.build(TableGeometry, ("table",), **table_d)

    sc_d = ctx.section(d, "scenario", SCENARIO_KEYS)
    gains_d = ctx.section(d, "gains", _names(PdGains))
    solver_d = ctx.section(d, "solver", MPC_KEYS | OCP_KEYS)

    name = sc_d.get("swing_type", "loop")
    swing = ctx.build(swing_type, ("scenario", "swing_type"), str(name), sc_d.get("speed", 6.0),
                      sc_d.get("T_swing", 0.5))
    launch_d = sc_d.get("launcher", {})
    if not isinstance(launch_d, dict) or set(launch_d) - _names(Launcher):
        ctx.fail("scenario.launcher must be an object with keys " + ", ".join(sorted(_names(Launcher))),
                 "scenario", "launcher")
    launcher = ctx.build(Launcher, ("scenario", "launcher"),
                         **{k: tuple(v) if isinstance(v, list) else v for k, v in launch_d.items()})
    model_d = sc_d.get("model_aero", {})
    if not isinstance(model_d, dict) or set(model_d) - _names(AeroParams):
        ctx.fail("scenario.model_aero must be an object of aero fields", "scenario", "model_aero")
    model_aero = ctx.build(replace, ("scenario", "model_aero"), aero, **model_d)
    contact = ctx.build(ContactParams, ("scenario", "contact"), **sc_d.get("contact", {}))

    ocp_d = {k: solver_d[k] for k in OCP_KEYS if k in solver_d}
    N = ocp_d.get("N", 50)
    T = swing.T_swing
    ocp = ctx.build(so.OcpParams, ("solver",), np.zeros(arm.n_joints), np.zeros(arm.n_joints),
                    dt=T / N if isinstance(N, int) and N > 0 else 0.0, **ocp_d)
    mpc_d = {k: solver_d[k] for k in MPC_KEYS if k in solver_d}
    if "mode" in mpc_d:
        mpc_d["mode"] = str(mpc_d["mode"]).upper()
    mpc = ctx.build(MpcConfig, ("solver",), T_swing=T, ocp=ocp, **mpc_d)
    gains = ctx.build(PdGains, ("gains",), **gains_d)
    if len(gains.Kp) != arm.n_joints:
        ctx.fail(f"gains must have {arm.n_joints} entries", "gains")

    plain = {k: sc_d[k] for k in ("n_trials", "sigma", "rate", "delay", "mass_factor", "torque_noise")
             if k in sc_d}
    ready_q = sc_d.get("ready_q", [0.0] * arm.n_joints)
    if not isinstance(ready_q, list) or len(ready_q) != arm.n_joints \
            or not all(isinstance(x, (int, float)) for x in ready_q):
        ctx.fail(f"ready_q must have {arm.n_joints} entries", "scenario", "ready_q")
    scenario = ctx.build(Scenario, ("scenario",), swing=swing, launcher=launcher, true_aero=aero,
                         model_aero=model_aero, geom=geom, mpc=mpc, gains=gains, contact=contact,
                         ready_q=tuple(float(x) for x in ready_q), **plain)
    streams = sc_d.get("bench_streams", 50)
    if not isinstance(streams, int) or streams < 50:
        ctx.fail("bench_streams must be an integer >= 50", "scenario", "bench_streams")
    return RunConfig(arm, scenario, streams, path)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return parse_config(text, str(p), p.parent)
