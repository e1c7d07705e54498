"""The position-control MDP wrapped around the dynamics.

``QuadEnv`` runs ``n`` independent episodes in lockstep (``n=1`` for
training). Each slot owns its own random stream, derived from the episode
seed and slot index, so results do not depend on how many slots run
together. Individual building blocks (observations, reward, termination,
curriculum) are plain functions so tests and the trainer can call them on
stored data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from quadfly import dynamics as dyn
from quadfly.params import QuadParams

ACTION_DIM = 4
CRITIC_OBS_DIM = 28

ABLATIONS = {
    "All Components": (),
    "Observation Noise": ("observation_noise",),
    "Reward Recalculation": ("reward_recalculation",),
    "Exploration Noise Decay": ("exploration_decay",),
    "Disturbances": ("disturbances",),
    "Asymmetric Actor-Critic": ("asymmetric_critic",),
    "Action History": ("action_history",),
    "Curriculum": ("curriculum",),
    "Rotor Delay": ("rotor_delay",),
    "AAC & Curriculum": ("asymmetric_critic", "curriculum"),
}


@dataclass
class RewardWeights:
    position: float = 0.0
    orientation: float = 0.0
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0
    action: float = 0.0
    action_baseline: float = 0.0
    survival: float = 0.0

    PENALTIES = ("position", "orientation", "linear_velocity", "angular_velocity", "action")

    def __post_init__(self):
        for name in self.PENALTIES:
            if getattr(self, name) < 0:
                raise ValueError(f"penalty weight {name} must be nonnegative")


@dataclass
class Schedule:
    """Exponential multiply-and-clamp schedule for one scalar.

    The value after ``k`` boundaries is ``init * factor**k`` clamped so it
    never passes ``target``.
    """

    init: float
    factor: float
    target: float

    def value(self, k: int) -> float:
        try:
            v = self.init * self.factor**k
        except OverflowError:
            return self.target
        if self.init <= self.target:
            return min(v, self.target)
        return max(v, self.target)


@dataclass
class CurriculumSchedule:
    init: RewardWeights
    target: RewardWeights
    factors: RewardWeights
    interval: int = 100_000

    def weights_after(self, k: int) -> RewardWeights:
        out = {}
        for f in fields(RewardWeights):
            sched = Schedule(getattr(self.init, f.name), getattr(self.factors, f.name), getattr(self.target, f.name))
            out[f.name] = sched.value(k)
        return RewardWeights(**out)


def _default_curriculum():
    baseline = 0.334  # normalized hover action of the default platform
    return CurriculumSchedule(
        init=RewardWeights(1.0, 1.0, 0.05, 0.005, 0.01, baseline, 1.5),
        target=RewardWeights(4.0, 2.0, 0.2, 0.01, 0.1, baseline, 1.5),
        factors=RewardWeights(1.5, 1.5, 1.5, 1.2, 1.6, 1.0, 1.0),
    )


@dataclass
class InitialStateDistribution:
    position: float = 0.2
    max_angle: float = np.pi / 4
    linear_velocity: float = 0.5
    angular_velocity: float = 1.0
    rpm_range: tuple = (1000.0, 2000.0)

    def __post_init__(self):
        self.rpm_range = tuple(float(x) for x in self.rpm_range)
        if min(self.position, self.max_angle, self.linear_velocity, self.angular_velocity) < 0:
            raise ValueError("initial-state bounds must be nonnegative")
        if self.rpm_range[0] > self.rpm_range[1]:
            raise ValueError("rpm_range must be (low, high)")


@dataclass
class Ablation:
    """Component switches; turning one off removes that component."""

    observation_noise: bool = True
    disturbances: bool = True
    rotor_delay: bool = True
    action_history: bool = True
    curriculum: bool = True
    reward_recalculation: bool = True
    exploration_decay: bool = True
    asymmetric_critic: bool = True

    @classmethod
    def without(cls, row: str) -> Ablation:
        if row not in ABLATIONS:
            raise KeyError(f"unknown ablation row {row!r}; valid: {sorted(ABLATIONS)}")
        return cls(**{name: False for name in ABLATIONS[row]})


@dataclass
class EnvConfig:
    params: QuadParams = field(default_factory=QuadParams)
    init: InitialStateDistribution = field(default_factory=InitialStateDistribution)
    disturbance_force: float = 0.01
    disturbance_torque: float = 1e-5
    noise_position: float = 0.002
    noise_orientation: float = 0.0
    noise_linear_velocity: float = 0.02
    noise_angular_velocity: float = 0.1
    position_limit: float = 0.6
    velocity_limit: float = 10.0
    angular_velocity_limit: float = 35.0
    max_steps: int = 500
    history_length: int = 1
    dt: float = dyn.DEFAULT_DT
    curriculum: CurriculumSchedule = field(default_factory=_default_curriculum)
    ablation: Ablation = field(default_factory=Ablation)

    @property
    def effective_history(self) -> int:
        return self.history_length if self.ablation.action_history else 0

    @property
    def actor_obs_dim(self) -> int:
        return 18 + 4 * self.effective_history

    @property
    def critic_obs_dim(self) -> int:
        return CRITIC_OBS_DIM if self.ablation.asymmetric_critic else self.actor_obs_dim

    def deployment(self) -> EnvConfig:
        """The environment a trained policy is judged in.

        Physical effects removed for training (rotor lag, sensor noise,
        disturbances) are restored; switches that only shape the policy's
        interface or the training procedure are kept.
        """
        ab = replace(self.ablation, rotor_delay=True, observation_noise=True, disturbances=True)
        return replace(self, ablation=ab)

    def initial_weights(self) -> RewardWeights:
        if self.ablation.curriculum:
            return self.curriculum.init
        return self.curriculum.target

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["params"] = self.params.to_dict()
        d["init"] = asdict(self.init)
        d["init"]["rpm_range"] = list(self.init.rpm_range)
        d["curriculum"] = {
            "init": asdict(self.curriculum.init),
            "target": asdict(self.curriculum.target),
            "factors": asdict(self.curriculum.factors),
            "interval": self.curriculum.interval,
        }
        d["ablation"] = asdict(self.ablation)
        return {_UNIT_KEYS.get(k, k): v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> EnvConfig:
        inverse = {v: k for k, v in _UNIT_KEYS.items()}
        d = {inverse.get(k, k): v for k, v in d.items()}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown env config keys: {sorted(unknown)}")
        if "params" in d:
            d["params"] = QuadParams.from_dict(d["params"])
        if "init" in d:
            d["init"] = InitialStateDistribution(**d["init"])
        if "curriculum" in d:
            c = d["curriculum"]
            d["curriculum"] = CurriculumSchedule(
                init=RewardWeights(**c["init"]),
                target=RewardWeights(**c["target"]),
                factors=RewardWeights(**c["factors"]),
                interval=int(c.get("interval", 100_000)),
            )
        if "ablation" in d:
            d["ablation"] = Ablation(**d["ablation"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> EnvConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


_UNIT_KEYS = {
    "disturbance_force": "disturbance_force_N",
    "disturbance_torque": "disturbance_torque_Nm",
    "noise_position": "noise_position_m",
    "noise_orientation": "noise_orientation",
    "noise_linear_velocity": "noise_linear_velocity_m_s",
    "noise_angular_velocity": "noise_angular_velocity_rad_s",
    "position_limit": "position_limit_m",
    "velocity_limit": "velocity_limit_m_s",
    "angular_velocity_limit": "angular_velocity_limit_rad_s",
    "dt": "dt_s",
}


# -- building blocks -----------------------------------------------------------


def action_to_rpm(params: QuadParams, a):
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    return params.rpm_min + (a + 1.0) / 2.0 * (params.rpm_max - params.rpm_min)


def rpm_to_action(params: QuadParams, rpm):
    return 2.0 * (np.asarray(rpm, dtype=np.float64) - params.rpm_min) / (params.rpm_max - params.rpm_min) - 1.0


def _random_quaternions(rng, n, max_angle):
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = rng.uniform(0.0, max_angle, size=n)
    half = 0.5 * angle
    return np.concatenate([np.cos(half)[:, None], np.sin(half)[:, None] * axis], axis=1)


def sample_initial_state(dist: InitialStateDistribution, rng) -> np.ndarray:
    """One initial state: uniform boxes, random-axis rotation, uniform rotor speeds."""
    s = np.empty(dyn.STATE_DIM)
    s[dyn.POS] = rng.uniform(-dist.position, dist.position, size=3)
    s[dyn.QUAT] = _random_quaternions(rng, 1, dist.max_angle)[0]
    s[dyn.VEL] = rng.uniform(-dist.linear_velocity, dist.linear_velocity, size=3)
    s[dyn.ANG_VEL] = rng.uniform(-dist.angular_velocity, dist.angular_velocity, size=3)
    lo, hi = dist.rpm_range
    s[dyn.RPM] = rng.uniform(lo, hi, size=4)
    return s


def sample_disturbance(force_scale: float, torque_scale: float, rng, enabled: bool = True) -> np.ndarray:
    if force_scale < 0 or torque_scale < 0:
        raise ValueError("disturbance scales must be nonnegative")
    d = np.concatenate([
        rng.uniform(-force_scale, force_scale, size=3),
        rng.uniform(-torque_scale, torque_scale, size=3),
    ])
    if not enabled:
        return np.zeros(6)
    return d


def _true_features(states):
    states = np.atleast_2d(states)
    n = states.shape[0]
    R = dyn._rotmat(states[:, dyn.QUAT]).reshape(n, 9)
    return np.concatenate([states[:, dyn.POS], R, states[:, dyn.VEL], states[:, dyn.ANG_VEL]], axis=1)


def _noise_scale(noise_std):
    sp, sr, sv, sw = noise_std
    if not (sp or sr or sv or sw):
        return None
    return np.concatenate([np.full(3, sp), np.full(9, sr), np.full(3, sv), np.full(3, sw)])


def observe_actor(states, history, noise_std=(0.0, 0.0, 0.0, 0.0), rng=None) -> np.ndarray:
    """Actor observation ``[p, R (row-major), v, omega, H]``.

    ``history`` has shape ``(N, N_H, 4)`` with the most recent action first;
    ``noise_std`` gives the Gaussian standard deviations for the position,
    rotation-matrix, velocity and angular-velocity blocks. The rotation
    matrix is perturbed entrywise and not re-orthonormalized.
    """
    single = np.ndim(states) == 1
    feats = _true_features(states)
    n = feats.shape[0]
    history = np.asarray(history, dtype=np.float64).reshape(n, -1)
    scale = _noise_scale(noise_std)
    if rng is not None and scale is not None:
        feats = feats + rng.normal(size=feats.shape) * scale
    out = np.concatenate([feats, history], axis=1)
    return out[0] if single else out


def observe_critic(states, dists) -> np.ndarray:
    """Noise-free privileged observation ``[p, R, v, omega, rpm, f_r, tau_r]``."""
    single = np.ndim(states) == 1
    states = np.atleast_2d(states)
    dists = np.atleast_2d(dists)
    out = np.concatenate([_true_features(states), states[:, dyn.RPM], dists], axis=1)
    return out[0] if single else out


def reward(w: RewardWeights, next_states, actions):
    """Negative weighted squared cost plus survival bonus, on the post-transition state."""
    s = np.asarray(next_states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    p, v, om = s[..., dyn.POS], s[..., dyn.VEL], s[..., dyn.ANG_VEL]
    qw = s[..., 3]
    da = a - w.action_baseline
    return (
        -w.position * np.sum(p * p, axis=-1)
        - w.orientation * (1.0 - qw * qw)
        - w.linear_velocity * np.sum(v * v, axis=-1)
        - w.angular_velocity * np.sum(om * om, axis=-1)
        - w.action * np.sum(da * da, axis=-1)
        + w.survival
    )


def terminate(states, cfg: EnvConfig):
    s = np.asarray(states, dtype=np.float64)
    bad = ~np.all(np.isfinite(s), axis=-1)
    with np.errstate(invalid="ignore"):
        out = np.max(np.abs(s[..., dyn.POS]), axis=-1) > cfg.position_limit
        out |= np.sqrt(np.sum(s[..., dyn.VEL] ** 2, axis=-1)) > cfg.velocity_limit
        out |= np.sqrt(np.sum(s[..., dyn.ANG_VEL] ** 2, axis=-1)) > cfg.angular_velocity_limit
    return out | bad


def curriculum_update(schedule: CurriculumSchedule, global_step: int, enabled: bool = True) -> RewardWeights:
    """Reward weights in force from ``global_step`` on.

    Without the curriculum the target weights apply from the first step.
    """
    if not enabled:
        return schedule.target
    return schedule.weights_after(global_step // schedule.interval)


# -- environment -----------------------------------------------------------------


@dataclass
class StepResult:
    states: np.ndarray
    obs: np.ndarray
    critic_obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    crashed: np.ndarray


class QuadEnv:
    """``n`` lockstepped episodes of the hover/position task."""

    def __init__(self, cfg: EnvConfig, n: int = 1):
        self.cfg = cfg
        self.n = n
        self.weights = cfg.initial_weights()
        self.states = np.zeros((n, dyn.STATE_DIM))
        self.dists = np.zeros((n, 6))
        self.history = np.zeros((n, cfg.effective_history, ACTION_DIM))
        self.steps = np.zeros(n, dtype=np.int64)
        self.rngs = [None] * n

    @property
    def noise_std(self):
        c = self.cfg
        if not c.ablation.observation_noise:
            return (0.0, 0.0, 0.0, 0.0)
        return (c.noise_position, c.noise_orientation, c.noise_linear_velocity, c.noise_angular_velocity)

    def reset_slot(self, i: int, seed, state=None, disturbance=None) -> None:
        """Start a fresh episode in slot ``i`` from its own random stream."""
        c = self.cfg
        rng = np.random.default_rng(seed)
        self.rngs[i] = rng
        s = sample_initial_state(c.init, rng) if state is None else np.asarray(state, dtype=np.float64)
        d = sample_disturbance(c.disturbance_force, c.disturbance_torque, rng, c.ablation.disturbances)
        if disturbance is not None:
            d = np.asarray(disturbance, dtype=np.float64)
        self.states[i] = s
        self.dists[i] = d
        self.history[i] = rpm_to_action(c.params, s[dyn.RPM])
        self.steps[i] = 0

    def reset(self, seeds, states=None) -> np.ndarray:
        for i in range(self.n):
            self.reset_slot(i, seeds[i], None if states is None else states[i])
        return self.actor_obs()

    def actor_obs(self, states=None) -> np.ndarray:
        """Noisy actor observation of ``states`` (default: the true states)."""
        feats = _true_features(self.states if states is None else states)
        scale = _noise_scale(self.noise_std)
        if scale is not None:
            for i in range(self.n):
                feats[i] += self.rngs[i].normal(size=(1, feats.shape[1]))[0] * scale
        return np.concatenate([feats, self.history.reshape(self.n, -1)], axis=1)

    def critic_obs(self, actor_obs) -> np.ndarray:
        if self.cfg.ablation.asymmetric_critic:
            return observe_critic(self.states, self.dists)
        return actor_obs

    def step(self, actions) -> StepResult:
        c = self.cfg
        a = np.clip(np.asarray(actions, dtype=np.float64).reshape(self.n, ACTION_DIM), -1.0, 1.0)
        u = action_to_rpm(c.params, a)
        states = self.states
        if not c.ablation.rotor_delay:
            states = states.copy()
            states[:, dyn.RPM] = u
        nxt, crashed = dyn.step_batch(c.params, states, u, self.dists, c.dt)
        if self.history.shape[1]:
            self.history[:, 1:] = self.history[:, :-1]
            self.history[:, 0] = a
        self.states = nxt
        self.steps += 1
        done = terminate(nxt, c) | crashed
        truncated = ~done & (self.steps >= c.max_steps)
        with np.errstate(all="ignore"):
            r = reward(self.weights, nxt, a)
        obs = self.actor_obs()
        return StepResult(nxt.copy(), obs, self.critic_obs(obs), r, done, truncated, crashed)
