"""Uniform replay buffer that keeps raw states next to observations.

Raw post-transition states and actions are kept so rewards can be
recomputed exactly whenever the reward weights change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from quadfly.dynamics import STATE_DIM
from quadfly.env import ACTION_DIM, RewardWeights, reward


class EmptyBufferError(RuntimeError):
    pass


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    obs: np.ndarray
    next_obs: np.ndarray
    critic_obs: np.ndarray
    next_critic_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, actor_obs_dim: int, critic_obs_dim: int, obs_dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.count = 0
        self.states = np.zeros((capacity, STATE_DIM))
        self.actions = np.zeros((capacity, ACTION_DIM))
        self.next_states = np.zeros((capacity, STATE_DIM))
        self.obs = np.zeros((capacity, actor_obs_dim), dtype=obs_dtype)
        self.next_obs = np.zeros((capacity, actor_obs_dim), dtype=obs_dtype)
        self.critic_obs = np.zeros((capacity, critic_obs_dim), dtype=obs_dtype)
        self.next_critic_obs = np.zeros((capacity, critic_obs_dim), dtype=obs_dtype)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def push(self, s, a, s2, obs, obs2, cobs, cobs2, r, done) -> None:
        """Store one transition; ``done`` marks true termination only."""
        i = self.count % self.capacity
        self.states[i] = s
        self.actions[i] = a
        self.next_states[i] = s2
        self.obs[i] = obs
        self.next_obs[i] = obs2
        self.critic_obs[i] = cobs
        self.next_critic_obs[i] = cobs2
        self.rewards[i] = r
        self.dones[i] = done
        self.count += 1

    def sample_indices(self, n: int, rng) -> np.ndarray:
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        return rng.integers(0, len(self), size=n)

    def sample(self, n: int, rng) -> Batch:
        return self.gather(self.sample_indices(n, rng))

    def gather(self, idx) -> Batch:
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.next_states[idx],
            self.obs[idx],
            self.next_obs[idx],
            self.critic_obs[idx],
            self.next_critic_obs[idx],
            self.rewards[idx],
            self.dones[idx],
        )

    def recalculate_rewards(self, w: RewardWeights, enabled: bool = True) -> None:
        """Rewrite every stored reward under weights ``w``."""
        if not enabled:
            return
        n = len(self)
        with np.errstate(all="ignore"):
            self.rewards[:n] = reward(w, self.next_states[:n], self.actions[:n])
