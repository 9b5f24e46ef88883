"""Serial-chain model of the 5-DoF striking arm.

Kinematics (paddle centre, paddle normal, Jacobians) and rigid-body dynamics
(mass matrix, Coriolis vector, gravity vector) for a chain of revolute joints.
The default model has a 3-DoF shoulder with intersecting axes, an elbow and a
wrist rotating about the forearm, 3 kg of total mass concentrated near the
shoulder, and the paddle face normal perpendicular to the forearm.

Sign convention for the dynamics::

    M(q) qdd + C(q, qd) = tau_g(q) + u

so ``tau_g`` is the generalized gravity *force* (minus the potential-energy
gradient) and holding a static pose takes ``u = -tau_g``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import InvalidParameters

GRAVITY = np.array([0.0, 0.0, -9.81])
PADDLE_RADIUS = 0.075


@dataclass(frozen=True)
class ArmParams:
    axes: np.ndarray
    offsets: np.ndarray
    masses: np.ndarray
    coms: np.ndarray
    inertias: np.ndarray
    rotor: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    paddle_offset: np.ndarray
    normal_dir: np.ndarray
    paddle_radius: float = PADDLE_RADIUS
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        arrays = {}
        for name in ("axes", "offsets", "coms", "inertias", "masses", "rotor",
                     "q_min", "q_max", "paddle_offset", "normal_dir", "gravity"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            arrays[name] = arr
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        n = arrays["axes"].shape[0]
        shapes = {"axes": (n, 3), "offsets": (n, 3), "coms": (n, 3), "inertias": (n, 3, 3),
                  "masses": (n,), "rotor": (n,), "q_min": (n,), "q_max": (n,),
                  "paddle_offset": (3,), "normal_dir": (3,), "gravity": (3,)}
        for name, shape in shapes.items():
            if arrays[name].shape != shape:
                raise InvalidParameters(f"{name} has shape {arrays[name].shape}, expected {shape}")
        if not np.allclose(np.linalg.norm(arrays["axes"], axis=1), 1.0, atol=1e-12):
            raise InvalidParameters("joint axes must be unit vectors")
        if abs(np.linalg.norm(arrays["normal_dir"]) - 1.0) > 1e-12:
            raise InvalidParameters("normal_dir must be a unit vector")
        if np.any(arrays["q_min"] >= arrays["q_max"]):
            raise InvalidParameters("q_min must be strictly below q_max for every joint")
        if np.any(arrays["masses"] < 0) or np.any(arrays["rotor"] <= 0):
            raise InvalidParameters("masses must be >= 0 and rotor inertias > 0")
        if self.paddle_radius <= 0:
            raise InvalidParameters("paddle_radius must be positive")

    @property
    def n_joints(self) -> int:
        return self.axes.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def reach(self) -> float:
        """Upper bound on the paddle-centre distance from the first joint."""
        return float(np.linalg.norm(self.offsets, axis=1).sum() + np.linalg.norm(self.paddle_offset))

    def kin_args(self):
        return self.axes, self.offsets, self.paddle_offset, self.normal_dir

    def dyn_args(self):
        return self.axes, self.offsets, self.masses, self.coms, self.inertias, self.rotor

    def scaled_mass(self, factor: float) -> "ArmParams":
        """Copy with every link mass and inertia scaled (model-mismatch studies)."""
        return replace(self, masses=self.masses * factor, inertias=self.inertias * factor)

    def with_limits(self, q_min, q_max) -> "ArmParams":
        return replace(self, q_min=np.asarray(q_min, float), q_max=np.asarray(q_max, float))

    def to_dict(self) -> dict:
        return {
            "axes": self.axes.tolist(),
            "offsets": self.offsets.tolist(),
            "masses": self.masses.tolist(),
            "coms": self.coms.tolist(),
            "inertias": self.inertias.tolist(),
            "rotor": self.rotor.tolist(),
            "q_min": self.q_min.tolist(),
            "q_max": self.q_max.tolist(),
            "paddle_offset": self.paddle_offset.tolist(),
            "normal_dir": self.normal_dir.tolist(),
            "paddle_radius": self.paddle_radius,
            "gravity": self.gravity.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParams":
        base = default_arm().to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise InvalidParameters(f"unknown arm fields: {sorted(unknown)}")
        base.update(d)
        try:
            return cls(**base)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameters):
                raise
            raise InvalidParameters(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ArmParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _box_inertia(m, lx, ly, lz):
    return np.diag([m * (ly**2 + lz**2) / 12, m * (lx**2 + lz**2) / 12, m * (lx**2 + ly**2) / 12])


def default_arm() -> ArmParams:
    """Documented default 5-DoF model.

    At q = 0 (the ready pose) the upper arm hangs straight down from the
    shoulder (0.30 m), the elbow is bent 90 degrees with the forearm (0.32 m)
    pointing backwards (-X), and the paddle centre sits 0.13 m beyond the wrist
    with its face normal along -Y.  Joint axes at q = 0: shoulder pitch (Y),
    shoulder abduction (X), humeral rotation (Z, along the upper arm), elbow (Y),
    wrist pronation (-X, along the forearm).
    """
    axes = [[0, 1, 0], [1, 0, 0], [0, 0, 1], [0, 1, 0], [-1, 0, 0]]
    offsets = [[0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, -0.30], [-0.32, 0, 0]]
    masses = [0.45, 0.45, 1.25, 0.55, 0.30]
    coms = [[0, 0, 0], [0, 0, -0.02], [0, 0, -0.06], [-0.14, 0, 0], [-0.10, 0, 0]]
    inertias = [
        _box_inertia(0.45, 0.08, 0.08, 0.08),
        _box_inertia(0.45, 0.07, 0.07, 0.09),
        _box_inertia(1.25, 0.08, 0.08, 0.18),
        _box_inertia(0.55, 0.30, 0.04, 0.04),
        _box_inertia(0.30, 0.20, 0.01, 0.15),
    ]
    # reflected actuator inertia; the wrist value keeps the 500 Hz PD loop stable
    rotor = [0.00612, 0.00612, 0.00612, 0.00612, 0.01]
    q_lim = np.array([2.5, 2.5, 2.5, 2.5, 1.6])
    return ArmParams(
        axes=axes, offsets=offsets, masses=masses, coms=coms, inertias=inertias,
        rotor=rotor, q_min=-q_lim, q_max=q_lim,
        paddle_offset=[-0.13, 0, 0], normal_dir=[0, -1, 0],
    )


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        qd = np.array(self.qd, dtype=float).reshape(-1)
        if q.shape != qd.shape:
            raise InvalidParameters("q and qd must have the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise InvalidParameters("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    @staticmethod
    def rest(q) -> "JointState":
        q = np.asarray(q, float)
        return JointState(q, np.zeros_like(q))


def _q(q) -> np.ndarray:
    return np.ascontiguousarray(q, dtype=float)


def fk_paddle(arm: ArmParams, q) -> np.ndarray:
    p, _, _, _ = K.paddle_pose(_q(q), *arm.kin_args())
    return p


def fk_normal_point(arm: ArmParams, q) -> np.ndarray:
    """Point one unit along the paddle normal from the paddle centre."""
    p, n, _, _ = K.paddle_pose(_q(q), *arm.kin_args())
    return p + n


def paddle_normal(arm: ArmParams, q) -> np.ndarray:
    return fk_normal_point(arm, q) - fk_paddle(arm, q)


def paddle_pose(arm: ArmParams, q):
    """(paddle centre, unit normal)."""
    p, n, _, _ = K.paddle_pose(_q(q), *arm.kin_args())
    return p, n


def joint_frames(arm: ArmParams, q):
    """World-frame joint origins and axes, each of shape (n, 3)."""
    origins, zaxes, _ = K.chain(_q(q), arm.axes, arm.offsets)
    return origins, zaxes


def jacobian(arm: ArmParams, q) -> np.ndarray:
    _, _, J, _, _ = K.jacobians(_q(q), *arm.kin_args())
    return J


def normal_jacobian(arm: ArmParams, q) -> np.ndarray:
    _, _, _, Jn, _ = K.jacobians(_q(q), *arm.kin_args())
    return Jn


def kinematics(arm: ArmParams, q):
    """Paddle centre, normal, linear Jacobian and normal Jacobian in one pass."""
    p, n, J, Jn, _ = K.jacobians(_q(q), *arm.kin_args())
    return p, n, J, Jn


def velocity_partials(arm: ArmParams, q, qd) -> np.ndarray:
    return K.velocity_partials(_q(q), _q(qd), *arm.kin_args())


def paddle_velocity(arm: ArmParams, q, qd) -> np.ndarray:
    return jacobian(arm, q) @ np.asarray(qd, float)


def inverse_dynamics(arm: ArmParams, q, qd, qdd, gravity=None) -> np.ndarray:
    g = arm.gravity if gravity is None else np.asarray(gravity, float)
    return K.rnea(_q(q), _q(qd), _q(qdd), g, *arm.dyn_args())


def mass_matrix(arm: ArmParams, q) -> np.ndarray:
    return K.mass_matrix(_q(q), *arm.dyn_args())


def gravity_vector(arm: ArmParams, q) -> np.ndarray:
    n = arm.n_joints
    return -K.rnea(_q(q), np.zeros(n), np.zeros(n), arm.gravity, *arm.dyn_args())


def coriolis_vector(arm: ArmParams, q, qd) -> np.ndarray:
    n = arm.n_joints
    return K.rnea(_q(q), _q(qd), np.zeros(n), np.zeros(3), *arm.dyn_args())


def dynamics_terms(arm: ArmParams, q, qd):
    """Return (M, C, tau_g) with M qdd + C = tau_g + u."""
    return mass_matrix(arm, q), coriolis_vector(arm, q, qd), gravity_vector(arm, q)


def forward_dynamics(arm: ArmParams, q, qd, u) -> np.ndarray:
    return K.forward_dynamics(_q(q), _q(qd), _q(u), arm.gravity, *arm.dyn_args())


def potential_energy(arm: ArmParams, q) -> float:
    return float(K.potential_energy(_q(q), arm.gravity, arm.axes, arm.offsets, arm.masses, arm.coms))


def kinetic_energy(arm: ArmParams, q, qd) -> float:
    return float(K.kinetic_energy(_q(q), _q(qd), *arm.dyn_args()))


def within_limits(arm: ArmParams, q, tol: float = 0.0) -> bool:
    q = np.asarray(q, float)
    return bool(np.all(q >= arm.q_min - tol) and np.all(q <= arm.q_max + tol))


# -- workspace analysis -------------------------------------------------------

@dataclass
class WorkspaceCell:
    y: float
    z: float
    mean_err_deg: float
    reachable: bool


def orientation_sweep(h_half_deg: float = 15.0, v_half_deg: float = 45.0,
                      n_h: int = 5, n_v: int = 7, strike_rotation=None) -> np.ndarray:
    """Unit normals swept around the hitting direction (+X of the strike frame)."""
    R = np.eye(3) if strike_rotation is None else np.asarray(strike_rotation, float)
    normals = []
    for b in np.radians(np.linspace(-v_half_deg, v_half_deg, n_v)):
        for a in np.radians(np.linspace(-h_half_deg, h_half_deg, n_h)):
            normals.append(R @ np.array([np.cos(b) * np.cos(a), np.cos(b) * np.sin(a), np.sin(b)]))
    return np.array(normals)


def workspace_sweep(arm: ArmParams, ys, zs, normals=None, x_plane: float = 0.0,
                    err_cap_deg: float = 10.0, seeds=None) -> list[WorkspaceCell]:
    """Mean paddle-orientation error over a grid of strike-plane positions.

    For each (y, z) the kinematic solver is run once per swept normal; the
    cell is reachable when the paddle centre reaches the point. Errors are
    averaged over the sweep and capped at ``err_cap_deg`` for display.
    """
    from .swing_ocp import ik_solve

    if normals is None:
        normals = orientation_sweep()
    if seeds is None:
        seeds = _default_ik_seeds(arm)
    cells = []
    prev_row = None
    for z in zs:
        row = []
        for j, y in enumerate(ys):
            target = np.array([x_plane, y, z])
            errs = []
            reachable = False
            guesses = list(seeds)
            if row and row[-1] is not None:
                guesses.insert(0, row[-1])
            if prev_row is not None and prev_row[j] is not None:
                guesses.insert(0, prev_row[j])
            best_q = None
            for nrm in normals:
                res = ik_solve(arm, target, nrm, guesses)
                if res.success:
                    reachable = True
                    errs.append(res.orient_err_deg)
                    best_q = res.q if best_q is None else best_q
                    guesses = [res.q] + [g for g in guesses if g is not res.q][:4]
            row.append(best_q)
            err = float(min(np.mean(errs), err_cap_deg)) if errs else float(err_cap_deg)
            cells.append(WorkspaceCell(float(y), float(z), err, reachable))
        prev_row = row
    return cells


def _default_ik_seeds(arm: ArmParams):
    n = arm.n_joints
    seeds = [np.zeros(n)]
    if n == 5:
        seeds += [np.array([0.0, -0.6, 1.5, 0.3, 0.0]),
                  np.array([-0.4, -1.0, 1.5, -0.3, 0.5]),
                  np.array([0.4, -0.3, 1.2, 0.8, -0.5])]
    return seeds


def write_workspace_csv(path, cells, schema: str = "ttswing-workspace v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "z", "mean_err_deg", "reachable"])
        for c in cells:
            w.writerow([f"{c.y:.6g}", f"{c.z:.6g}", f"{c.mean_err_deg:.6g}", int(c.reachable)])
