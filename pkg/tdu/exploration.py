"""
Exploration signals used by the baseline variants: visit-count bonus,
absolute-TD-error reward, value-spread uncertainty and UCB1 head sampling
"""
from collections import defaultdict
from typing import Dict, Tuple

import numpy as np

from tdu.exceptions import InvalidArgumentError

COUNT_OFFSET = 0.01


class CountTable:
    """
    Exact (observation, action) visit counts

    Observations are one-hot in every environment here, so the raw bytes of
    the observation identify the state exactly.
    """

    def __init__(self):
        self._counts: Dict[Tuple[bytes, int], int] = defaultdict(int)

    @staticmethod
    def _key(obs: np.ndarray, action: int) -> Tuple[bytes, int]:
        return np.ascontiguousarray(obs, dtype=np.float64).tobytes(), int(action)

    def increment(self, obs: np.ndarray, action: int) -> int:
        key = self._key(obs, action)
        self._counts[key] += 1
        return self._counts[key]

    def count(self, obs: np.ndarray, action: int) -> int:
        return self._counts.get(self._key(obs, action), 0)

    def bonus(self, obs: np.ndarray, action: int) -> float:
        return cts_bonus(self.count(obs, action))

    def bonuses(self, obs_batch: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.array([self.bonus(o, a) for o, a in zip(obs_batch, actions)], dtype=np.float64)

    def __len__(self) -> int:
        return len(self._counts)

    def items(self):
        return self._counts.items()

    @classmethod
    def from_items(cls, items) -> "CountTable":
        table = cls()
        for key, value in items:
            table._counts[key] = int(value)
        return table


def cts_bonus(count: float) -> float:
    """Count bonus (n + 0.01)^(-1/2)"""
    if count < 0:
        raise InvalidArgumentError(f"visit count must be >= 0, got {count}")
    return float((count + COUNT_OFFSET) ** -0.5)


def qex_reward(primary_td_error):
    """Intrinsic reward of the exploration network: |delta| of the primary network"""
    return np.abs(primary_td_error)


def qu_sigma(q_values_per_head: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Bessel-corrected standard deviation of Q-values across heads

    Raises:
        InvalidArgumentError: If fewer than two heads are given
    """
    q = np.asarray(q_values_per_head, dtype=np.float64)
    if q.ndim == 0 or q.shape[axis] < 2:
        raise InvalidArgumentError("value spread needs at least two heads")
    return np.std(q, axis=axis, ddof=1)


class UcbHeadSampler:
    """
    UCB1 over ensemble heads

    `values[k]` is the running mean of rewards observed while head k acted and
    `counts[k]` the number of environment steps taken under head k. Heads
    never pulled are chosen first, lowest index first.

    Args:
        num_heads: Number of arms
        eta: Exploration coefficient
    """

    def __init__(self, num_heads: int, eta: float):
        if num_heads < 1:
            raise InvalidArgumentError(f"num_heads must be >= 1, got {num_heads}")
        if eta < 0:
            raise InvalidArgumentError(f"eta must be >= 0, got {eta}")
        self.eta = float(eta)
        self.values = np.zeros(num_heads, dtype=np.float64)
        self.counts = np.zeros(num_heads, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def select(self) -> int:
        unplayed = np.flatnonzero(self.counts == 0)
        if unplayed.size:
            return int(unplayed[0])
        scores = self.values + self.eta * np.sqrt(np.log(self.total) / self.counts)
        return int(np.argmax(scores))

    def update(self, head: int, reward: float) -> None:
        self.counts[head] += 1
        self.values[head] += (reward - self.values[head]) / self.counts[head]
