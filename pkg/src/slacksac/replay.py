"""FIFO experience buffer with episode-end epoch sampling.

At each episode end, half of the stored transitions (floor(count/2)) are
drawn uniformly without replacement and split into mini-batches of at most
batch_max, so the amount of replay grows with the buffer until it fills.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError

DEFAULT_CAPACITY = 102_400
DEFAULT_BATCH_MAX = 256


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: float
    truncated: float


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    truncateds: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Ring buffer over flat float64 arrays; strictly FIFO once full."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1 or state_dim < 1 or action_dim < 1:
            raise ConfigurationError("capacity and dimensions must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.truncateds = np.zeros(capacity)
        self.write_index = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, t: Transition) -> None:
        """Store one transition, evicting the oldest when full."""
        state = np.asarray(t.state, dtype=np.float64)
        action = np.asarray(t.action, dtype=np.float64)
        next_state = np.asarray(t.next_state, dtype=np.float64)
        fields = (state, action, next_state, np.asarray([t.reward, t.done, t.truncated]))
        if not all(np.all(np.isfinite(f)) for f in fields):
            raise ConfigurationError("transition contains non-finite values")
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ConfigurationError("state dimension mismatch")
        if action.shape != (self.action_dim,):
            raise ConfigurationError("action dimension mismatch")
        i = self.write_index
        self.states[i] = state
        self.actions[i] = action
        self.next_states[i] = next_state
        self.rewards[i] = float(t.reward)
        self.dones[i] = float(t.done)
        self.truncateds[i] = float(t.truncated)
        self.write_index = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def gather(self, indices: np.ndarray) -> Batch:
        return Batch(
            states=self.states[indices],
            actions=self.actions[indices],
            next_states=self.next_states[indices],
            rewards=self.rewards[indices],
            dones=self.dones[indices],
            truncateds=self.truncateds[indices],
        )

    def sample_epoch(self, batch_max: int, rng: np.random.Generator) -> list[Batch]:
        """Half-buffer epoch: floor(count/2) distinct indices, batched.

        All batches have batch_max rows except possibly the last; an empty
        or single-transition buffer yields no batches.
        """
        if batch_max < 1:
            raise ConfigurationError("batch_max must be positive")
        k = self.count // 2
        if k == 0:
            return []
        chosen = rng.permutation(self.count)[:k]
        return [self.gather(chosen[i : i + batch_max]) for i in range(0, k, batch_max)]

    def named_arrays(self):
        """Live views of the storage for checkpointing."""
        yield "replay/states", self.states
        yield "replay/actions", self.actions
        yield "replay/next_states", self.next_states
        yield "replay/rewards", self.rewards
        yield "replay/dones", self.dones
        yield "replay/truncateds", self.truncateds
