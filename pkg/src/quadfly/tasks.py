"""Trajectory tracking with a hover-trained policy.

A policy trained to fly to the origin becomes a tracker by feeding it the
state relative to a moving reference: position and velocity errors replace
position and velocity, clipped to the range seen during training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from quadfly import dynamics as dyn
from quadfly.env import EnvConfig, QuadEnv, rpm_to_action, terminate
from quadfly.td3 import as_policy


@dataclass
class LissajousSpec:
    """Figure-eight ``[ax cos(2 pi t/T), ay sin(4 pi t/T), altitude]``."""

    period: float = 15.0
    amplitude: tuple = (1.0, 0.5)
    altitude: float = 0.0
    cycles: int = 4

    def __post_init__(self):
        self.amplitude = tuple(float(a) for a in self.amplitude)
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")

    @property
    def duration(self) -> float:
        return self.cycles * self.period


def lissajous(spec: LissajousSpec, t):
    """Reference position and velocity at time(s) ``t``; shapes ``t.shape + (3,)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    w = 2 * np.pi / spec.period
    ax, ay = spec.amplitude
    p = np.stack([ax * np.cos(w * t), ay * np.sin(2 * w * t), np.full_like(t, spec.altitude)], axis=-1)
    v = np.stack([-ax * w * np.sin(w * t), 2 * ay * w * np.cos(2 * w * t), np.zeros_like(t)], axis=-1)
    return p, v


def tracking_observation(state, p_ref, v_ref, position_bound: float, velocity_bound: float) -> np.ndarray:
    """State with position and velocity replaced by clipped tracking errors."""
    s = np.array(state, dtype=np.float64, copy=True)
    s[..., dyn.POS] = np.clip(s[..., dyn.POS] - p_ref, -position_bound, position_bound)
    s[..., dyn.VEL] = np.clip(s[..., dyn.VEL] - v_ref, -velocity_bound, velocity_bound)
    return s


def rmse(actual, reference, include_z: bool = True) -> float:
    """Root mean squared Euclidean error over x, y (and z)."""
    actual = np.asarray(actual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if actual.shape != reference.shape:
        raise ValueError(f"series shapes differ: {actual.shape} vs {reference.shape}")
    if len(actual) == 0:
        raise ValueError("empty series")
    axes = 3 if include_z else 2
    d = actual[:, :axes] - reference[:, :axes]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


@dataclass
class TrackingResult:
    t: np.ndarray
    reference: np.ndarray
    actual: np.ndarray
    rmse: float
    rmse_xy: float
    success: bool

    @property
    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.actual - self.reference, axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "ref_x_m", "ref_y_m", "ref_z_m", "x_m", "y_m", "z_m", "error_m"])
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k])), *map(repr, self.reference[k].tolist()),
                            *map(repr, self.actual[k].tolist()), repr(float(self.errors[k]))])


def _fly_reference(cfg: EnvConfig, spec: LissajousSpec, seed, act, plant=None) -> TrackingResult:
    _, s0 = dyn.hover_equilibrium(cfg.params)
    s0[dyn.POS] = lissajous(spec, 0.0)[0]
    env = QuadEnv(cfg, 1)
    env.reset_slot(0, seed, s0)

    n = int(round(spec.duration / cfg.dt))
    ts, refs, acts = [], [], []
    success = True
    p_ref, v_ref = lissajous(spec, 0.0)
    for k in range(1, n + 1):
        a = np.asarray(act(env, p_ref, v_ref), dtype=np.float64).reshape(1, -1)
        res = env.step(a)
        t = k * cfg.dt
        if plant is not None:
            env.states[0] = plant(t, env.states[0])
        p_ref, v_ref = lissajous(spec, t)
        ts.append(t)
        refs.append(p_ref)
        acts.append(env.states[0, dyn.POS].copy())
        err = env.states[0].copy()
        err[dyn.POS] -= p_ref
        err[dyn.VEL] -= v_ref
        if terminate(err, cfg) or res.crashed[0]:
            success = False
            break
    ref, act_p = np.array(refs), np.array(acts)
    return TrackingResult(np.array(ts), ref, act_p, rmse(act_p, ref, True), rmse(act_p, ref, False), success)


def run_tracking(actor, cfg: EnvConfig, spec: LissajousSpec, seed,
                 plant: Callable[[float, np.ndarray], np.ndarray] | None = None) -> TrackingResult:
    """Fly ``spec.cycles`` cycles of the figure-eight with a deterministic policy.

    The vehicle starts at rest on the reference start point with rotors at
    hover speed. Termination is judged on the error state (the vehicle
    leaving the training box around the moving reference), which marks the
    run as failed. ``plant`` optionally overrides the post-step state and is
    meant for harness tests.
    """
    policy = as_policy(actor)
    pb, vb = cfg.init.position, cfg.init.linear_velocity

    def act(env, p_ref, v_ref):
        return policy(env.actor_obs(tracking_observation(env.states, p_ref, v_ref, pb, vb)))

    return _fly_reference(cfg, spec, seed, act, plant)


def run_pid_tracking(controller, cfg: EnvConfig, spec: LissajousSpec, seed) -> TrackingResult:
    """Same protocol for a state-feedback controller returning rotor speeds.

    The controller sees the true state and the unshifted reference.
    """
    controller.reset()

    def act(env, p_ref, v_ref):
        return rpm_to_action(cfg.params, controller(env.states[0], p_ref, v_ref, cfg.dt))

    return _fly_reference(cfg, spec, seed, act)
