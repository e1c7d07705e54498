"""Cascaded PID baseline: position -> attitude -> body rate -> mixer -> rotor speeds.

Used to confirm the simulator is flyable with a conventional controller and
as a reference point for tracking errors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from quadfly import dynamics as dyn
from quadfly.params import QuadParams


def allocation_matrix(params: QuadParams) -> np.ndarray:
    """Map from the four rotor thrusts to (collective thrust, roll, pitch, yaw torque)."""
    r = params.rotor_positions
    return np.array([
        np.ones(4),
        r[:, 1],
        -r[:, 0],
        params.rotor_directions * params.torque_coeff,
    ])


def mixer(params: QuadParams) -> np.ndarray:
    """Pseudo-inverse of the allocation map: wrench -> per-rotor thrusts."""
    return np.linalg.pinv(allocation_matrix(params))


def invert_thrust_curve(params: QuadParams, f):
    """Rotor speed producing thrust ``f``.

    Returns ``(speed, clamped)``; thrusts outside the achievable range are
    clamped to the nearest limit and flagged.
    """
    c0, c1, c2 = params.thrust_coeffs
    f = np.asarray(f, dtype=np.float64)
    lo, hi = params.thrust(params.rpm_min), params.thrust(params.rpm_max)
    clamped = (f < lo) | (f > hi)
    f = np.clip(f, lo, hi)
    if c2 == 0.0:
        w = (f - c0) / c1
    else:
        disc = np.maximum(c1 * c1 + 4 * c2 * (f - c0), 0.0)
        w = (-c1 + np.sqrt(disc)) / (2 * c2)
    return np.clip(w, params.rpm_min, params.rpm_max), clamped


@dataclass
class PidGains:
    """Loop gains and limits. Defaults were tuned in simulation for the default platform."""

    position_p: tuple = (2.0, 2.0, 4.0)
    position_i: tuple = (0.2, 0.2, 0.5)
    position_d: tuple = (3.0, 3.0, 3.0)
    max_acceleration: float = 6.0
    max_integral: float = 2.0
    attitude_p: tuple = (4.0, 4.0, 3.0)
    max_rate: float = 6.0
    rate_p: tuple = (15.0, 15.0, 10.0)
    rate_i: tuple = (0.0, 0.0, 0.0)
    rate_d: tuple = (0.0, 0.0, 0.0)
    max_rate_integral: float = 1.0
    motor_lead: float = 1.0

    def __post_init__(self):
        for name in ("position_p", "position_i", "position_d", "attitude_p", "rate_p", "rate_i", "rate_d"):
            setattr(self, name, tuple(float(x) for x in getattr(self, name)))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> PidGains:
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> PidGains:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _vee(M):
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


@dataclass
class PidController:
    """Stateful cascaded controller; call ``reset`` between episodes."""

    params: QuadParams = field(default_factory=QuadParams)
    gains: PidGains = field(default_factory=PidGains)

    def __post_init__(self):
        self.mix = mixer(self.params)
        self.reset()

    def reset(self) -> None:
        self.pos_integral = np.zeros(3)
        self.rate_integral = np.zeros(3)
        self.prev_rate_error = None
        self.saturated = False

    def __call__(self, s, p_ref, v_ref=np.zeros(3), dt: float = dyn.DEFAULT_DT) -> np.ndarray:
        """Rotor-speed setpoints (rad/s) for state ``s``."""
        g, prm = self.gains, self.params
        s = np.asarray(s, dtype=np.float64)
        p, v, omega = s[dyn.POS], s[dyn.VEL], s[dyn.ANG_VEL]
        R = dyn.quat_to_rotmat(s[dyn.QUAT])

        # position loop -> desired acceleration (anti-windup by clamping the integral)
        e_p = np.asarray(p_ref, dtype=np.float64) - p
        e_v = np.asarray(v_ref, dtype=np.float64) - v
        self.pos_integral = np.clip(self.pos_integral + e_p * dt, -g.max_integral, g.max_integral)
        acc = np.multiply(g.position_p, e_p) + np.multiply(g.position_d, e_v) + np.multiply(g.position_i, self.pos_integral)
        acc = np.clip(acc, -g.max_acceleration, g.max_acceleration)

        # desired thrust vector and attitude (yaw held at zero)
        force = prm.mass * (acc - prm.gravity)
        if force[2] < 0.1 * prm.mass * abs(prm.gravity[2]):
            force[2] = 0.1 * prm.mass * abs(prm.gravity[2])
        z_des = force / np.linalg.norm(force)
        y_des = np.cross(z_des, [1.0, 0.0, 0.0])
        y_des /= np.linalg.norm(y_des)
        x_des = np.cross(y_des, z_des)
        R_des = np.column_stack([x_des, y_des, z_des])
        thrust = float(force @ R[:, 2])

        # attitude loop -> desired body rates
        e_R = 0.5 * _vee(R_des.T @ R - R.T @ R_des)
        rate_des = np.clip(-np.multiply(g.attitude_p, e_R), -g.max_rate, g.max_rate)

        # rate loop -> torques
        e_w = rate_des - omega
        self.rate_integral = np.clip(self.rate_integral + e_w * dt, -g.max_rate_integral, g.max_rate_integral)
        d_w = np.zeros(3) if self.prev_rate_error is None else (e_w - self.prev_rate_error) / dt
        self.prev_rate_error = e_w
        alpha = np.multiply(g.rate_p, e_w) + np.multiply(g.rate_i, self.rate_integral) + np.multiply(g.rate_d, d_w)
        J = prm.inertia
        torque = J @ alpha + np.cross(omega, J @ omega)

        f = self.mix @ np.concatenate([[thrust], torque])
        w, clamped = invert_thrust_curve(prm, f)
        self.saturated = bool(np.any(clamped))
        if g.motor_lead:
            # lead on the measured rotor speed shortens the effective motor lag
            w = np.clip(w + g.motor_lead * (w - s[dyn.RPM]), prm.rpm_min, prm.rpm_max)
        return w


def fly(controller: PidController, s0, reference, n_steps: int, dt: float = dyn.DEFAULT_DT, dist=None):
    """Closed-loop simulation; ``reference(t)`` returns ``(p_ref, v_ref)``.

    Returns the state trajectory, shape ``(n_steps + 1, 17)``.
    """
    prm = controller.params
    traj = np.empty((n_steps + 1, dyn.STATE_DIM))
    traj[0] = s = np.asarray(s0, dtype=np.float64)
    for k in range(n_steps):
        p_ref, v_ref = reference(k * dt)
        u = controller(s, p_ref, v_ref, dt)
        s = dyn.step(prm, s, u, dist, dt)
        traj[k + 1] = s
    return traj
