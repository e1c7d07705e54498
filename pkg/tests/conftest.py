import sys

import numpy as np
import pytest

from quadfly import dynamics as dyn
from quadfly.params import QuadParams


@pytest.fixture
def params():
    return QuadParams()


def random_states(rng, params, n, pos=1.0, vel=2.0, omega=5.0):
    """Random valid states with rotor speeds inside the motor range."""
    s = np.empty((n, dyn.STATE_DIM))
    s[:, dyn.POS] = rng.uniform(-pos, pos, size=(n, 3))
    q = rng.normal(size=(n, 4))
    s[:, dyn.QUAT] = q / np.linalg.norm(q, axis=1, keepdims=True)
    s[:, dyn.VEL] = rng.uniform(-vel, vel, size=(n, 3))
    s[:, dyn.ANG_VEL] = rng.uniform(-omega, omega, size=(n, 3))
    s[:, dyn.RPM] = rng.uniform(params.rpm_min, params.rpm_max, size=(n, 4))
    return s


def random_setpoints(rng, params, n):
    return rng.uniform(params.rpm_min, params.rpm_max, size=(n, 4))


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    lines = sorted(getattr(mod, "REPORT_LINES", []), key=lambda s: int(s.split()[1].rstrip(":")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
