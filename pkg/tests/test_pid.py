import numpy as np
import pytest

from quadfly import dynamics as dyn
from quadfly.params import QuadParams
from quadfly.pid import PidController, PidGains, allocation_matrix, fly, invert_thrust_curve, mixer
from quadfly.tasks import LissajousSpec, lissajous, rmse


def _still(t):
    return np.zeros(3), np.zeros(3)


def test_mixer_round_trip(params):
    M, mix = allocation_matrix(params), mixer(params)
    rng = np.random.default_rng(0)
    for _ in range(100):
        wrench = np.concatenate([rng.uniform(0, 0.5, 1), rng.uniform(-1e-3, 1e-3, 2), rng.uniform(-1e-4, 1e-4, 1)])
        np.testing.assert_allclose(M @ (mix @ wrench), wrench, rtol=0, atol=1e-9 * np.abs(wrench).max())


def test_allocation_matches_simulator_torques(params):
    # thrusts -> wrench through the mixer's map agrees with the dynamics' own torque
    rng = np.random.default_rng(1)
    rpm = rng.uniform(500, 2000, 4)
    f = params.thrust(rpm)
    s = dyn.make_state(rpm=rpm)
    d = dyn.dynamics_derivative(params, s, rpm)
    wrench = allocation_matrix(params) @ f
    np.testing.assert_allclose(params.inertia @ d[dyn.ANG_VEL], wrench[1:], rtol=1e-10, atol=1e-18)
    assert d[9] == pytest.approx(params.gravity[2] + wrench[0] / params.mass, rel=1e-12)


def test_invert_thrust_curve(params):
    w = dyn.hover_rpm(params)
    got, flag = invert_thrust_curve(params, params.mass * 9.81 / 4)
    assert got == pytest.approx(w, rel=1e-12) and not flag
    rng = np.random.default_rng(2)
    f = rng.uniform(params.thrust(params.rpm_min), params.thrust(params.rpm_max), 1000)
    w, flags = invert_thrust_curve(params, f)
    np.testing.assert_allclose(params.thrust(w), f, rtol=0, atol=1e-9)
    assert not flags.any()
    c2 = params.thrust_coeffs[2]
    np.testing.assert_allclose(w, np.sqrt(f / c2), rtol=1e-12)


def test_invert_thrust_curve_general_and_clamped():
    p = QuadParams(thrust_coeffs=[0.01, 1e-6, 2.5e-8])
    f = np.linspace(p.thrust(0) + 1e-6, p.thrust(p.rpm_max), 50)
    w, _ = invert_thrust_curve(p, f)
    np.testing.assert_allclose(p.thrust(w), f, atol=1e-9)
    w, flag = invert_thrust_curve(p, [10.0, -1.0])
    assert flag.all()
    assert w[0] == p.rpm_max and w[1] == p.rpm_min


def test_hover_reference_outputs_hover_speed(params):
    w, s = dyn.hover_equilibrium(params)
    u = PidController(params)(s, np.zeros(3))
    np.testing.assert_allclose(u, w, rtol=1e-12)


def test_vertical_error_raises_all_rotors_equally(params):
    w, s = dyn.hover_equilibrium(params)
    u = PidController(params)(s, np.array([0.0, 0.0, 0.3]))
    assert np.all(u > w)
    np.testing.assert_allclose(u, u[0], rtol=1e-12)


def test_hover_fixed_point(params):
    _, s = dyn.hover_equilibrium(params)
    tr = fly(PidController(params), s, _still, 1000)
    assert np.abs(tr[:, dyn.POS]).max() <= 1e-6


@pytest.mark.parametrize("offset", [(0.2, 0, 0), (0, -0.2, 0), (0, 0, 0.2), (0.12, 0.12, -0.1)])
def test_settles_from_offset(params, offset):
    _, s = dyn.hover_equilibrium(params)
    s[dyn.POS] = offset
    tr = fly(PidController(params), s, _still, 1000)
    err = np.linalg.norm(tr[:, dyn.POS], axis=1)
    assert err[500:].max() <= 0.05


def test_completes_slow_figure_eight(params):
    spec = LissajousSpec(period=15.0)
    _, s = dyn.hover_equilibrium(params)
    s[dyn.POS] = lissajous(spec, 0.0)[0]
    n = int(round(spec.duration / 0.01))
    tr = fly(PidController(params), s, lambda t: lissajous(spec, t), n)
    ref, _ = lissajous(spec, np.arange(n + 1) * 0.01)
    assert np.linalg.norm(tr[:, dyn.POS] - ref, axis=1).max() < 0.6
    assert rmse(tr[:, dyn.POS], ref, include_z=False) < 0.3


def test_integrator_reset_and_gains_file(tmp_path, params):
    c = PidController(params)
    _, s = dyn.hover_equilibrium(params)
    c(s, np.ones(3))
    assert np.any(c.pos_integral != 0)
    c.reset()
    assert np.all(c.pos_integral == 0)
    g = PidGains(rate_p=(9, 9, 4))
    g.save(tmp_path / "gains.json")
    assert PidGains.load(tmp_path / "gains.json") == g
