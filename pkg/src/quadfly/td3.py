"""TD3 training with an asymmetric critic, reward curriculum and noise decay."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from quadfly import dynamics as dyn
from quadfly.env import (
    ACTION_DIM,
    EnvConfig,
    QuadEnv,
    RewardWeights,
    Schedule,
    curriculum_update,
    rpm_to_action,
)
from quadfly.nn import Adam, Mlp
from quadfly.replay import Batch, ReplayBuffer

log = logging.getLogger(__name__)

MA_WINDOW = 10


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    warmup_steps: int = 10_000
    total_steps: int = 400_000
    eval_interval: int = 1000
    eval_episodes: int = 8
    exploration_init: float = 0.5
    exploration_factor: float = 0.5
    exploration_target: float = 0.1
    hidden: tuple = (64, 64)
    activation: str = "relu"
    buffer_capacity: int = 1_000_000
    checkpoint_steps: tuple = (300_000, 3_000_000)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.checkpoint_steps = tuple(int(s) for s in self.checkpoint_steps)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["checkpoint_steps"] = list(self.checkpoint_steps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Td3Config:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown td3 config keys: {sorted(unknown)}")
        return cls(**d)


def exploration_noise(cfg: Td3Config, global_step: int, interval: int = 100_000, enabled: bool = True) -> float:
    if not enabled:
        return cfg.exploration_init
    sched = Schedule(cfg.exploration_init, cfg.exploration_factor, cfg.exploration_target)
    return sched.value(global_step // interval)


def critic_features(cfg: EnvConfig, cobs: np.ndarray) -> np.ndarray:
    """Scale privileged observations to roughly unit range for the critic."""
    if not cfg.ablation.asymmetric_critic:
        return cobs
    out = np.array(cobs, dtype=np.float64, copy=True)
    out[..., 18:22] = rpm_to_action(cfg.params, out[..., 18:22])
    if cfg.disturbance_force > 0:
        out[..., 22:25] /= cfg.disturbance_force
    if cfg.disturbance_torque > 0:
        out[..., 25:28] /= cfg.disturbance_torque
    return out


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    target.params[...] = tau * online.params + (1 - tau) * target.params


class Agent:
    """Actor, twin critics, their targets and optimizers."""

    def __init__(self, actor_dim: int, critic_dim: int, cfg: Td3Config, rng, dtype=np.float32):
        self.cfg = cfg
        h = cfg.hidden
        self.actor = Mlp((actor_dim, *h, ACTION_DIM), cfg.activation, "tanh", rng, dtype)
        self.critic1 = Mlp((critic_dim + ACTION_DIM, *h, 1), cfg.activation, "identity", rng, dtype)
        self.critic2 = Mlp((critic_dim + ACTION_DIM, *h, 1), cfg.activation, "identity", rng, dtype)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam(self.actor.n_params, cfg.actor_lr, dtype=dtype)
        self.critic1_opt = Adam(self.critic1.n_params, cfg.critic_lr, dtype=dtype)
        self.critic2_opt = Adam(self.critic2.n_params, cfg.critic_lr, dtype=dtype)
        self.updates = 0

    def act(self, obs) -> np.ndarray:
        return self.actor.forward(np.atleast_2d(obs))

    def critic_target_values(self, b: Batch, rng):
        """TD target ``r + gamma (1 - done) min(Q1', Q2')`` with smoothed target actions."""
        cfg = self.cfg
        noise = np.clip(rng.normal(0.0, cfg.target_noise, size=(len(b.rewards), ACTION_DIM)),
                        -cfg.target_noise_clip, cfg.target_noise_clip)
        a2 = np.clip(self.actor_target.forward(b.next_obs) + noise, -1.0, 1.0)
        x2 = np.concatenate([b.next_critic_obs, a2.astype(b.next_critic_obs.dtype)], axis=1)
        q1 = self.critic1_target.forward(x2)[:, 0]
        q2 = self.critic2_target.forward(x2)[:, 0]
        return b.rewards + cfg.gamma * (1.0 - b.dones) * np.minimum(q1, q2)

    def critic_update(self, b: Batch, rng):
        y = self.critic_target_values(b, rng).astype(self.actor.dtype)[:, None]
        x = np.concatenate([b.critic_obs, b.actions.astype(b.critic_obs.dtype)], axis=1)
        losses = []
        n = len(y)
        for net, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            q, cache = net.forward_cached(x)
            err = q - y
            losses.append(float(np.mean(err * err)))
            grads, _ = net.backward(cache, (2.0 / n) * err)
            opt.step(net.params, grads)
        return losses

    def actor_loss_and_grad(self, obs, critic_obs):
        a, cache_a = self.actor.forward_cached(obs)
        x = np.concatenate([critic_obs, a.astype(critic_obs.dtype)], axis=1)
        q, cache_q = self.critic1.forward_cached(x)
        n = len(q)
        _, gin = self.critic1.backward(cache_q, np.full_like(q, -1.0 / n), need_input_grad=True)
        grads, _ = self.actor.backward(cache_a, gin[:, -ACTION_DIM:])
        return -float(np.mean(q)), grads

    def actor_update(self, b: Batch) -> float:
        loss, grads = self.actor_loss_and_grad(b.obs, b.critic_obs)
        self.actor_opt.step(self.actor.params, grads)
        return loss

    def update(self, buffer: ReplayBuffer, sample_rng, noise_rng):
        b = buffer.sample(self.cfg.batch_size, sample_rng)
        c_losses = self.critic_update(b, noise_rng)
        self.updates += 1
        a_loss = None
        if self.updates % self.cfg.policy_delay == 0:
            a_loss = self.actor_update(b)
            tau = self.cfg.tau
            soft_update(self.actor_target, self.actor, tau)
            soft_update(self.critic1_target, self.critic1, tau)
            soft_update(self.critic2_target, self.critic2, tau)
        if not np.all(np.isfinite(c_losses)) or (a_loss is not None and not np.isfinite(a_loss)):
            raise TrainingDiverged(f"non-finite loss after {self.updates} updates: critic={c_losses} actor={a_loss}")
        return c_losses, a_loss


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    """Per-episode returns, lengths and mean horizontal distance from the origin (m)."""

    returns: np.ndarray
    lengths: np.ndarray
    errors: np.ndarray = None

    def __post_init__(self):
        if self.errors is None:
            self.errors = np.zeros(len(self.returns))

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if len(self.returns) else 0.0

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths)) if len(self.lengths) else 0.0


def as_policy(actor) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(actor, Mlp):
        return actor.forward
    return actor


def evaluate(actor, cfg: EnvConfig, n: int, seed, weights: RewardWeights | None = None,
             initial_states=None) -> EvalResult:
    """Run ``n`` noise-free-policy episodes side by side.

    Episodes are seeded from ``seed`` (an int or a tuple of ints) and the
    episode index, so the result does not depend on training randomness.
    """
    if n == 0:
        return EvalResult(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0))
    policy = as_policy(actor)
    env = QuadEnv(cfg, n)
    if weights is not None:
        env.weights = weights
    seed = tuple(np.atleast_1d(seed).tolist())
    for i in range(n):
        env.reset_slot(i, [*seed, i], None if initial_states is None else initial_states[i])
    obs = env.actor_obs()
    active = np.ones(n, dtype=bool)
    returns = np.zeros(n)
    lengths = np.zeros(n, dtype=np.int64)
    xy_sum = np.zeros(n)
    _, safe = dyn.hover_equilibrium(cfg.params)
    while active.any():
        a = np.asarray(policy(obs), dtype=np.float64).reshape(n, ACTION_DIM)
        res = env.step(a)
        returns[active] += res.reward[active]
        lengths[active] += 1
        xy_sum[active] += np.hypot(res.states[active, 0], res.states[active, 1])
        ended = res.done | res.truncated
        active &= ~ended
        if ended.any():
            # park finished slots somewhere harmless; their output is ignored
            env.states[ended] = safe
            env.steps[ended] = 0
            obs = env.actor_obs()
        else:
            obs = res.obs
    return EvalResult(returns, lengths, xy_sum / np.maximum(lengths, 1))


# -- training ----------------------------------------------------------------------


@dataclass
class EvalRecord:
    step: int
    return_mean: float
    return_ma10: float
    length_mean: float
    length_ma10: float
    wallclock_s: float


@dataclass
class TrainResult:
    actor: Mlp
    stats: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    weights: RewardWeights | None = None


def _moving_average(values, window=MA_WINDOW):
    return float(np.mean(values[-window:]))


def train(env_cfg: EnvConfig, cfg: Td3Config, seed: int,
          on_eval: Callable[[EvalRecord], None] | None = None) -> TrainResult:
    """Train a policy for ``cfg.total_steps`` environment steps.

    Every ``cfg.eval_interval`` steps the current actor is evaluated in the
    deployment environment; at each curriculum boundary the reward weights
    and exploration noise advance and the replay rewards are recomputed.
    """
    ss = np.random.SeedSequence(seed)
    init_rng, explore_rng, sample_rng, target_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    ab = env_cfg.ablation
    interval = env_cfg.curriculum.interval

    env = QuadEnv(env_cfg, 1)
    agent = Agent(env_cfg.actor_obs_dim, env_cfg.critic_obs_dim, cfg, init_rng)
    buffer = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.total_steps, 1)),
                          env_cfg.actor_obs_dim, env_cfg.critic_obs_dim)
    eval_cfg = env_cfg.deployment()
    result = TrainResult(agent.actor)

    episode = 0
    obs = env.reset([[seed, 1, episode]])
    cobs = critic_features(env_cfg, env.critic_obs(obs))
    sigma = exploration_noise(cfg, 0, interval, ab.exploration_decay)
    ret_hist, len_hist = [], []
    t0 = time.perf_counter()

    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps:
            a = explore_rng.uniform(-1.0, 1.0, size=(1, ACTION_DIM))
        else:
            a = agent.act(obs).astype(np.float64)
            a = np.clip(a + explore_rng.normal(0.0, sigma, size=a.shape), -1.0, 1.0)
        s = env.states[0].copy()
        res = env.step(a)
        cobs2 = critic_features(env_cfg, res.critic_obs)
        buffer.push(s, a[0], res.states[0], obs[0], res.obs[0], cobs[0], cobs2[0],
                    res.reward[0], bool(res.done[0]))
        if res.done[0] or res.truncated[0]:
            episode += 1
            obs = env.reset([[seed, 1, episode]])
            cobs = critic_features(env_cfg, env.critic_obs(obs))
        else:
            obs, cobs = res.obs, cobs2

        if step > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            agent.update(buffer, sample_rng, target_rng)

        if step % interval == 0:
            env.weights = curriculum_update(env_cfg.curriculum, step, ab.curriculum)
            buffer.recalculate_rewards(env.weights, ab.reward_recalculation)
            sigma = exploration_noise(cfg, step, interval, ab.exploration_decay)
            log.info("step %d: reward weights %s, exploration sigma %.4f", step, env.weights, sigma)

        if step in cfg.checkpoint_steps:
            result.checkpoints[step] = agent.actor.copy()

        if step % cfg.eval_interval == 0:
            ev = evaluate(agent.actor, eval_cfg, cfg.eval_episodes, (seed, 2, step), env.weights)
            ret_hist.append(ev.mean_return)
            len_hist.append(ev.mean_length)
            rec = EvalRecord(step, ev.mean_return, _moving_average(ret_hist),
                             ev.mean_length, _moving_average(len_hist), time.perf_counter() - t0)
            result.stats.append(rec)
            if on_eval is not None:
                on_eval(rec)

    result.weights = env.weights
    return result
