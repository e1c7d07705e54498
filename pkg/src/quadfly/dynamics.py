"""Rigid-body quadrotor dynamics with first-order rotor lag.

States are flat float64 arrays of length 17 laid out as
``[p(3), q(4), v(3), omega(3), rpm(4)]``; batches have shape ``(N, 17)``.
Disturbances are arrays of length 6: world-frame force followed by
body-frame torque.

Integration runs in a compiled per-environment kernel. ``step`` is
``step_batch`` with N=1, and a batch is a loop over the same kernel, so
batched and one-at-a-time stepping agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from quadfly.params import ParameterError, QuadParams

STATE_DIM = 17
POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
ANG_VEL = slice(10, 13)
RPM = slice(13, 17)

DEFAULT_DT = 0.01


class ContractViolation(ValueError):
    pass


class IntegrationDiverged(FloatingPointError):
    pass


@dataclass
class QuadState:
    """Named view of a single state vector."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    rpm: np.ndarray

    @classmethod
    def from_array(cls, s) -> QuadState:
        s = np.asarray(s, dtype=np.float64)
        return cls(s[POS].copy(), s[QUAT].copy(), s[VEL].copy(), s[ANG_VEL].copy(), s[RPM].copy())

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.omega, self.rpm]).astype(np.float64)


def make_state(p=(0, 0, 0), q=(1, 0, 0, 0), v=(0, 0, 0), omega=(0, 0, 0), rpm=(0, 0, 0, 0)):
    return QuadState(*(np.asarray(x, dtype=np.float64) for x in (p, q, v, omega, rpm))).to_array()


def quat_to_rotmat(q, tol: float = 1e-6) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``.

    Accepts shape ``(4,)`` or ``(N, 4)``. Every entry is a sum of products of
    two quaternion components, which makes ``R(q)`` and ``R(-q)`` identical
    bit for bit.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.sqrt(np.sum(q * q, axis=-1))
    if np.any(np.abs(norm - 1.0) > tol):
        raise ContractViolation(f"quaternion not unit norm (|q| = {norm})")
    return _rotmat(q)


def _rotmat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    R[..., 0, 1] = 2.0 * (xy - wz)
    R[..., 0, 2] = 2.0 * (xz + wy)
    R[..., 1, 0] = 2.0 * (xy + wz)
    R[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    R[..., 1, 2] = 2.0 * (yz - wx)
    R[..., 2, 0] = 2.0 * (xz - wy)
    R[..., 2, 1] = 2.0 * (yz + wx)
    R[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return R


def rotor_thrusts(params: QuadParams, rpm):
    c0, c1, c2 = params.thrust_coeffs
    return c0 + c1 * rpm + c2 * rpm * rpm


# Parameter vector layout consumed by the compiled kernels.
_M, _G, _J, _JI, _R, _D, _C, _CT, _TM, _WMIN, _WMAX = 0, 1, 4, 13, 22, 34, 38, 41, 42, 43, 44
_NPACK = 45


def pack_params(params: QuadParams) -> np.ndarray:
    return np.concatenate([
        [params.mass], params.gravity, params.inertia.ravel(), params.inertia_inv.ravel(),
        params.rotor_positions.ravel(), params.rotor_directions, params.thrust_coeffs,
        [params.torque_coeff, params.motor_time_constant, params.rpm_min, params.rpm_max],
    ]).astype(np.float64)


@njit(cache=True, error_model="numpy")
def _deriv(P, s, u, d, out):
    w, x, y, z = s[3], s[4], s[5], s[6]
    ox, oy, oz = s[10], s[11], s[12]
    c0, c1, c2 = P[_C], P[_C + 1], P[_C + 2]
    f0 = c0 + c1 * s[13] + c2 * s[13] * s[13]
    f1 = c0 + c1 * s[14] + c2 * s[14] * s[14]
    f2 = c0 + c1 * s[15] + c2 * s[15] * s[15]
    f3 = c0 + c1 * s[16] + c2 * s[16] * s[16]
    total = ((f0 + f1) + f2) + f3

    out[0] = s[7]
    out[1] = s[8]
    out[2] = s[9]
    # q_dot = 0.5 * q (x) (0, omega)
    out[3] = 0.5 * (-x * ox - y * oy - z * oz)
    out[4] = 0.5 * (w * ox + y * oz - z * oy)
    out[5] = 0.5 * (w * oy - x * oz + z * ox)
    out[6] = 0.5 * (w * oz + x * oy - y * ox)

    # third column of R(q) is the body z axis in the world frame
    m = P[_M]
    out[7] = P[_G] + (2.0 * (x * z + w * y) * total + d[0]) / m
    out[8] = P[_G + 1] + (2.0 * (y * z - w * x) * total + d[1]) / m
    out[9] = P[_G + 2] + ((1.0 - 2.0 * (x * x + y * y)) * total + d[2]) / m

    r = P[_R:_R + 12]
    ct = P[_CT]
    # r_i x (0, 0, f_i) = (r_y f, -r_x f, 0)
    tx = ((r[1] * f0 + r[4] * f1) + r[7] * f2) + r[10] * f3 + d[3]
    ty = ((-r[0] * f0 + -r[3] * f1) + -r[6] * f2) + -r[9] * f3 + d[4]
    tz = ((P[_D] * ct * f0 + P[_D + 1] * ct * f1) + P[_D + 2] * ct * f2) + P[_D + 3] * ct * f3 + d[5]

    J = P[_J:_J + 9]
    Ji = P[_JI:_JI + 9]
    hx = (J[0] * ox + J[1] * oy) + J[2] * oz
    hy = (J[3] * ox + J[4] * oy) + J[5] * oz
    hz = (J[6] * ox + J[7] * oy) + J[8] * oz
    # tau - omega x (J omega)
    nx = tx - (oy * hz - oz * hy)
    ny = ty - (oz * hx - ox * hz)
    nz = tz - (ox * hy - oy * hx)
    out[10] = (Ji[0] * nx + Ji[1] * ny) + Ji[2] * nz
    out[11] = (Ji[3] * nx + Ji[4] * ny) + Ji[5] * nz
    out[12] = (Ji[6] * nx + Ji[7] * ny) + Ji[8] * nz

    tm = P[_TM]
    for i in range(4):
        out[13 + i] = (u[i] - s[13 + i]) / tm


@njit(cache=True, error_model="numpy")
def _rk4_one(P, s, u, d, dt, out):
    k1 = np.empty(STATE_DIM)
    k2 = np.empty(STATE_DIM)
    k3 = np.empty(STATE_DIM)
    k4 = np.empty(STATE_DIM)
    tmp = np.empty(STATE_DIM)
    _deriv(P, s, u, d, k1)
    for i in range(STATE_DIM):
        tmp[i] = s[i] + (0.5 * dt) * k1[i]
    _deriv(P, tmp, u, d, k2)
    for i in range(STATE_DIM):
        tmp[i] = s[i] + (0.5 * dt) * k2[i]
    _deriv(P, tmp, u, d, k3)
    for i in range(STATE_DIM):
        tmp[i] = s[i] + dt * k3[i]
    _deriv(P, tmp, u, d, k4)
    for i in range(STATE_DIM):
        out[i] = s[i] + (dt / 6.0) * (((k1[i] + 2.0 * k2[i]) + 2.0 * k3[i]) + k4[i])
    norm = np.sqrt(((out[3] * out[3] + out[4] * out[4]) + out[5] * out[5]) + out[6] * out[6])
    for i in range(3, 7):
        out[i] = out[i] / norm
    lo, hi = P[_WMIN], P[_WMAX]
    for i in range(13, 17):
        # NaN passes through unclamped so divergence stays visible
        if out[i] < lo:
            out[i] = lo
        elif out[i] > hi:
            out[i] = hi


@njit(cache=True, error_model="numpy")
def _step_all(P, states, actions, dists, dt, out, diverged):
    for n in range(states.shape[0]):
        _rk4_one(P, states[n], actions[n], dists[n], dt, out[n])
        bad = False
        for i in range(STATE_DIM):
            if not np.isfinite(out[n, i]):
                bad = True
        diverged[n] = bad


@njit(cache=True, error_model="numpy")
def _deriv_all(P, states, actions, dists, out):
    for n in range(states.shape[0]):
        _deriv(P, states[n], actions[n], dists[n], out[n])


def _as_batch(a, width, n=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None]
    if a.ndim != 2 or a.shape[1] != width or (n is not None and a.shape[0] != n):
        raise ValueError(f"expected shape ({n if n is not None else 'N'}, {width}), got {a.shape}")
    return a


def dynamics_derivative(params: QuadParams, s, u, dist=None) -> np.ndarray:
    """Time derivative of the state for rotor-speed setpoints ``u``.

    Accepts a single state ``(17,)`` or a batch ``(N, 17)`` with matching
    ``u`` and ``dist`` (``None`` means no disturbance).
    """
    single = np.ndim(s) == 1
    S = _as_batch(s, STATE_DIM)
    U = _as_batch(u, 4, len(S))
    D = np.zeros((len(S), 6)) if dist is None else _as_batch(dist, 6, len(S))
    out = np.empty_like(S)
    _deriv_all(params.packed, S, U, D, out)
    return out[0] if single else out


def step_batch(params: QuadParams, states, actions, dists=None, dt: float = DEFAULT_DT):
    """Advance N environments by one RK4 step.

    Returns ``(next_states, diverged)`` where ``diverged`` flags the slots
    whose result contains NaN or Inf. Diverged slots are returned as
    computed; the caller decides how to handle them.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    S = _as_batch(states, STATE_DIM)
    U = _as_batch(actions, 4, len(S))
    D = np.zeros((len(S), 6)) if dists is None else _as_batch(dists, 6, len(S))
    out = np.empty_like(S)
    diverged = np.empty(len(S), dtype=np.bool_)
    _step_all(params.packed, S, U, D, float(dt), out, diverged)
    return out, diverged


def step(params: QuadParams, s, u, dist=None, dt: float = DEFAULT_DT) -> np.ndarray:
    """Advance a single state by one RK4 step; raises on divergence."""
    nxt, diverged = step_batch(params, np.asarray(s)[None], np.asarray(u)[None],
                               None if dist is None else np.asarray(dist)[None], dt)
    if diverged[0]:
        raise IntegrationDiverged("non-finite state after integration step")
    return nxt[0]


def hover_rpm(params: QuadParams) -> float:
    """Rotor speed at which four rotors exactly carry the vehicle's weight."""
    c0, c1, c2 = params.thrust_coeffs
    per_rotor = params.mass * float(np.linalg.norm(params.gravity)) / 4.0
    if c2 != 0.0:
        disc = c1 * c1 - 4.0 * c2 * (c0 - per_rotor)
        if disc < 0:
            raise ParameterError("hover infeasible: thrust curve never reaches weight")
        root = (-c1 + np.sqrt(disc)) / (2.0 * c2)
    elif c1 != 0.0:
        root = (per_rotor - c0) / c1
    else:
        raise ParameterError("hover infeasible: constant thrust curve")
    if not params.rpm_min <= root <= params.rpm_max:
        raise ParameterError(f"hover rotor speed {root:.1f} rad/s outside motor range")
    return _polish_hover(params, float(root))


def _polish_hover(params, root):
    # Search neighbouring floats for one whose vertical acceleration
    # evaluates to exactly zero in the derivative's arithmetic order.
    def residual(w):
        s = make_state(rpm=(w, w, w, w))
        return abs(dynamics_derivative(params, s, s[RPM])[9])

    best, best_res = root, residual(root)
    lo = hi = root
    for _ in range(256):
        if best_res == 0.0:
            break
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
        for cand in (lo, hi):
            res = residual(cand)
            if res < best_res:
                best, best_res = float(cand), res
    return best


def hover_equilibrium(params: QuadParams):
    w = hover_rpm(params)
    return w, make_state(rpm=(w, w, w, w))
