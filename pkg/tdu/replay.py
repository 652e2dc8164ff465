"""
Ring-buffer replay memory with per-head bootstrap masks and reward noise
"""
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from tdu.exceptions import InvalidArgumentError, PreconditionError
from tdu.nn import RngStream


@dataclass(frozen=True)
class Transition:
    """
    One environment step shared by every head

    `discount` is 0 at episode end and 1 otherwise; the agent's gamma is
    applied at loss time. `mask` and `noise` hold one entry per head and are
    fixed when the transition is stored.
    """

    obs: np.ndarray
    action: int
    reward: float
    discount: float
    next_obs: np.ndarray
    mask: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True)
class TransitionBatch:
    """Column-stacked transitions: obs (B, d), action (B,), ..., mask (B, H), noise (B, H)"""

    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    discount: np.ndarray
    next_obs: np.ndarray
    mask: np.ndarray
    noise: np.ndarray

    def __len__(self) -> int:
        return int(self.action.shape[0])

    @classmethod
    def from_transitions(cls, transitions) -> "TransitionBatch":
        transitions = list(transitions)
        if not transitions:
            raise InvalidArgumentError("cannot build a batch from zero transitions")
        return cls(
            obs=np.stack([t.obs for t in transitions]).astype(np.float64),
            action=np.array([t.action for t in transitions], dtype=np.int64),
            reward=np.array([t.reward for t in transitions], dtype=np.float64),
            discount=np.array([t.discount for t in transitions], dtype=np.float64),
            next_obs=np.stack([t.next_obs for t in transitions]).astype(np.float64),
            mask=np.stack([t.mask for t in transitions]).astype(np.float64),
            noise=np.stack([t.noise for t in transitions]).astype(np.float64),
        )

    def transition(self, i: int) -> Transition:
        return Transition(
            obs=self.obs[i],
            action=int(self.action[i]),
            reward=float(self.reward[i]),
            discount=float(self.discount[i]),
            next_obs=self.next_obs[i],
            mask=self.mask[i],
            noise=self.noise[i],
        )


class ReplayBuffer:
    """
    FIFO replay memory with uniform sampling with replacement

    Storage is allocated on the first `add`, once the observation size is known.

    Args:
        capacity: Maximum number of stored transitions
        ensemble_size: Number of heads (length of every mask/noise vector)
    """

    def __init__(self, capacity: int, ensemble_size: int):
        if capacity < 1:
            raise InvalidArgumentError(f"capacity must be >= 1, got {capacity}")
        if ensemble_size < 1:
            raise InvalidArgumentError(f"ensemble_size must be >= 1, got {ensemble_size}")
        self.capacity = int(capacity)
        self.ensemble_size = int(ensemble_size)
        self.size = 0
        self.insertions = 0
        self._cursor = 0
        self._obs = None
        self._next_obs = None
        self._action = np.zeros(self.capacity, dtype=np.int64)
        self._reward = np.zeros(self.capacity, dtype=np.float64)
        self._discount = np.zeros(self.capacity, dtype=np.float64)
        self._mask = np.zeros((self.capacity, self.ensemble_size), dtype=np.float64)
        self._noise = np.zeros((self.capacity, self.ensemble_size), dtype=np.float64)

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        """
        Store a transition, evicting the oldest one when full

        Raises:
            InvalidArgumentError: If mask/noise length differs from the ensemble
                size, mask entries are not binary, or observation sizes change
        """
        mask = np.asarray(transition.mask, dtype=np.float64)
        noise = np.asarray(transition.noise, dtype=np.float64)
        if mask.shape != (self.ensemble_size,) or noise.shape != (self.ensemble_size,):
            raise InvalidArgumentError(
                f"mask/noise must have length {self.ensemble_size}, got {mask.shape} and {noise.shape}"
            )
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise InvalidArgumentError("mask entries must be 0 or 1")
        obs = np.asarray(transition.obs, dtype=np.float64)
        next_obs = np.asarray(transition.next_obs, dtype=np.float64)
        if self._obs is None:
            self._obs = np.zeros((self.capacity, obs.size), dtype=np.float64)
            self._next_obs = np.zeros((self.capacity, obs.size), dtype=np.float64)
        if obs.shape != (self._obs.shape[1],) or next_obs.shape != obs.shape:
            raise InvalidArgumentError(f"observation shape {obs.shape} does not match buffer ({self._obs.shape[1]},)")

        i = self._cursor
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._action[i] = int(transition.action)
        self._reward[i] = float(transition.reward)
        self._discount[i] = float(transition.discount)
        self._mask[i] = mask
        self._noise[i] = noise
        self._cursor = (self._cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.insertions += 1

    def _gather(self, indices: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            obs=self._obs[indices].copy(),
            action=self._action[indices].copy(),
            reward=self._reward[indices].copy(),
            discount=self._discount[indices].copy(),
            next_obs=self._next_obs[indices].copy(),
            mask=self._mask[indices].copy(),
            noise=self._noise[indices].copy(),
        )

    def sample_indices(self, batch_size: int, rng: RngStream) -> np.ndarray:
        """Slot indices drawn uniformly with replacement over current contents"""
        if self.size == 0:
            raise PreconditionError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: RngStream) -> TransitionBatch:
        """
        Draw a batch uniformly at random with replacement

        Raises:
            PreconditionError: If the buffer is empty
        """
        return self._gather(self.sample_indices(batch_size, rng))

    def oldest_first_indices(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self._cursor) % self.capacity

    def __iter__(self) -> Iterator[Transition]:
        """Stored transitions from oldest to newest"""
        if self.size == 0:
            return iter(())
        batch = self._gather(self.oldest_first_indices())
        return (batch.transition(i) for i in range(len(batch)))

    def state_dict(self) -> dict:
        """Arrays needed to restore the buffer exactly"""
        d = 0 if self._obs is None else self._obs.shape[1]
        return {
            "capacity": np.int64(self.capacity),
            "ensemble_size": np.int64(self.ensemble_size),
            "size": np.int64(self.size),
            "insertions": np.int64(self.insertions),
            "cursor": np.int64(self._cursor),
            "obs": self._obs if self._obs is not None else np.zeros((self.capacity, d)),
            "next_obs": self._next_obs if self._next_obs is not None else np.zeros((self.capacity, d)),
            "action": self._action,
            "reward": self._reward,
            "discount": self._discount,
            "mask": self._mask,
            "noise": self._noise,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "ReplayBuffer":
        buffer = cls(int(state["capacity"]), int(state["ensemble_size"]))
        buffer.size = int(state["size"])
        buffer.insertions = int(state["insertions"])
        buffer._cursor = int(state["cursor"])
        if state["obs"].shape[1] > 0:
            buffer._obs = np.array(state["obs"], dtype=np.float64)
            buffer._next_obs = np.array(state["next_obs"], dtype=np.float64)
        buffer._action = np.array(state["action"], dtype=np.int64)
        buffer._reward = np.array(state["reward"], dtype=np.float64)
        buffer._discount = np.array(state["discount"], dtype=np.float64)
        buffer._mask = np.array(state["mask"], dtype=np.float64)
        buffer._noise = np.array(state["noise"], dtype=np.float64)
        return buffer
