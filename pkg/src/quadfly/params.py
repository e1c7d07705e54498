"""Physical parameters of a multirotor and their JSON representation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Crazyflie 2.x class platform. Thrust curve fitted in RPM (3.16e-10 N/RPM^2)
# and converted to rad/s; arm length 28 mm in X configuration.
_RPM_TO_RAD_S = 2.0 * np.pi / 60.0
_ARM = 0.028


class ParameterError(ValueError):
    """Raised when a parameter set violates a physical invariant."""


@dataclass
class QuadParams:
    mass: float = 0.027
    inertia: np.ndarray = field(
        default_factory=lambda: np.diag([3.85e-6, 3.85e-6, 5.9675e-6])
    )
    rotor_positions: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [_ARM, -_ARM, 0.0],
                [-_ARM, -_ARM, 0.0],
                [-_ARM, _ARM, 0.0],
                [_ARM, _ARM, 0.0],
            ]
        )
    )
    rotor_directions: np.ndarray = field(
        default_factory=lambda: np.array([-1.0, 1.0, -1.0, 1.0])
    )
    thrust_coeffs: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 3.16e-10 / _RPM_TO_RAD_S**2])
    )
    torque_coeff: float = 0.005964552
    motor_time_constant: float = 0.15
    rpm_min: float = 0.0
    rpm_max: float = 21702.0 * _RPM_TO_RAD_S
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.mass = float(self.mass)
        self.inertia = np.asarray(self.inertia, dtype=np.float64).reshape(3, 3)
        self.rotor_positions = np.asarray(self.rotor_positions, dtype=np.float64).reshape(4, 3)
        self.rotor_directions = np.asarray(self.rotor_directions, dtype=np.float64).reshape(4)
        self.thrust_coeffs = np.asarray(self.thrust_coeffs, dtype=np.float64).reshape(3)
        self.torque_coeff = float(self.torque_coeff)
        self.motor_time_constant = float(self.motor_time_constant)
        self.rpm_min = float(self.rpm_min)
        self.rpm_max = float(self.rpm_max)
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        self.validate()
        self.inertia_inv = np.linalg.inv(self.inertia)
        from quadfly.dynamics import pack_params

        self.packed = pack_params(self)

    def validate(self) -> None:
        if not self.mass > 0:
            raise ParameterError("mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ParameterError("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ParameterError("inertia must be positive definite")
        if not self.motor_time_constant > 0:
            raise ParameterError("motor time constant must be positive")
        if not (self.rpm_max > self.rpm_min >= 0):
            raise ParameterError("need rpm_max > rpm_min >= 0")
        if not np.all(np.isin(self.rotor_directions, (-1.0, 1.0))):
            raise ParameterError("rotor directions must be +1 or -1")
        if not 4 * self.thrust(self.rpm_max) > self.mass * np.linalg.norm(self.gravity):
            raise ParameterError("hover infeasible: 4 f(rpm_max) <= m |g|")

    def thrust(self, rpm):
        c0, c1, c2 = self.thrust_coeffs
        return c0 + c1 * rpm + c2 * rpm * rpm

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "mass_kg": self.mass,
            "inertia_kg_m2": self.inertia.tolist(),
            "rotor_positions_m": self.rotor_positions.tolist(),
            "rotor_directions": self.rotor_directions.tolist(),
            "thrust_coeffs_N_per_rad_s_pow": self.thrust_coeffs.tolist(),
            "torque_coeff_m": self.torque_coeff,
            "motor_time_constant_s": self.motor_time_constant,
            "rpm_min_rad_s": self.rpm_min,
            "rpm_max_rad_s": self.rpm_max,
            "gravity_m_s2": self.gravity.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> QuadParams:
        keys = {
            "mass_kg": "mass",
            "inertia_kg_m2": "inertia",
            "rotor_positions_m": "rotor_positions",
            "rotor_directions": "rotor_directions",
            "thrust_coeffs_N_per_rad_s_pow": "thrust_coeffs",
            "torque_coeff_m": "torque_coeff",
            "motor_time_constant_s": "motor_time_constant",
            "rpm_min_rad_s": "rpm_min",
            "rpm_max_rad_s": "rpm_max",
            "gravity_m_s2": "gravity",
        }
        unknown = set(d) - set(keys)
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**{keys[k]: v for k, v in d.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> QuadParams:
        return cls.from_dict(json.loads(Path(path).read_text()))
