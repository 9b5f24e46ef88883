import numpy as np
import pytest

from ttswing import arm_model as am

L1, L2 = 0.30, 0.32


def planar_arm(q_lim=3.0):
    """Two joints about +Y, links hanging along -Z at q = 0."""
    return am.ArmParams(
        axes=[[0, 1, 0], [0, 1, 0]],
        offsets=[[0, 0, 0], [0, 0, -L1]],
        masses=[1.0, 0.5],
        coms=[[0, 0, -0.15], [0, 0, -0.16]],
        inertias=[np.eye(3) * 0.01, np.eye(3) * 0.005],
        rotor=[0.006, 0.006],
        q_min=[-q_lim, -q_lim],
        q_max=[q_lim, q_lim],
        paddle_offset=[0, 0, -L2],
        normal_dir=[1, 0, 0],
    )


def planar_fk(q):
    """Closed form: R_y(a) maps (0, 0, -L) to (-L sin a, 0, -L cos a)."""
    a, b = q
    return np.array([-L1 * np.sin(a) - L2 * np.sin(a + b), 0.0, -L1 * np.cos(a) - L2 * np.cos(a + b)])


def planar_ik(p):
    """Both elbow branches reaching (x, 0, z)."""
    x, z = -p[0], -p[2]  # so that x = L1 s1 + L2 s12, z = L1 c1 + L2 c12
    c2 = (x * x + z * z - L1**2 - L2**2) / (2 * L1 * L2)
    out = []
    for s in (1.0, -1.0):
        b = s * np.arccos(np.clip(c2, -1, 1))
        a = np.arctan2(x, z) - np.arctan2(L2 * np.sin(b), L1 + L2 * np.cos(b))
        out.append(np.array([a, b]))
    return out


@pytest.fixture(scope="session")
def arm():
    return am.default_arm()


@pytest.fixture(scope="session")
def planar():
    return planar_arm()


# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
