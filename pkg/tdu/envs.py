"""
Episodic exploration environments

Deep Sea (deterministic and stochastic) and the Binary Tree chain, each with
an exact optimal return used for regret accounting.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from tdu.exceptions import ContractViolationError, InvalidArgumentError
from tdu.nn import RngStream

NUM_ACTIONS = 2


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step; discount is 0 exactly when the episode ends"""

    observation: np.ndarray
    reward: float
    discount: float
    episode_done: bool


class DeepSeaEnv:
    """
    N x N grid where the agent descends one row per step

    Each cell carries a random bit deciding which raw action means "right".
    Moving right costs `unscaled_move_cost / N`; moving right from the last
    column on the final row pays `goal_reward`. In the stochastic variant the
    executed direction is inverted with probability 1/N on every step.

    Args:
        size: Grid size N (>= 4)
        rng: Stream the action map and the stochastic dynamics are drawn from
        stochastic: Whether "bad" transitions are enabled
        unscaled_move_cost: Total cost of N right moves
        goal_reward: Reward for reaching the goal
    """

    name = "deep_sea"

    def __init__(
        self,
        size: int,
        rng: RngStream,
        stochastic: bool = False,
        unscaled_move_cost: float = 0.01,
        goal_reward: float = 1.0,
        min_size: int = 4,
    ):
        if int(size) != size or size < min_size:
            raise InvalidArgumentError(f"Deep Sea size must be an integer >= {min_size}, got {size}")
        self.size = int(size)
        self.stochastic = bool(stochastic)
        self.bad_prob = 1.0 / self.size if self.stochastic else 0.0
        self.move_cost = unscaled_move_cost / self.size
        self.goal_reward = float(goal_reward)
        self.action_map = rng.split("action_map").binomial(1, 0.5, size=(self.size, self.size)).astype(bool)
        self._dynamics = rng.split("dynamics")
        self.row = 0
        self.column = 0
        self.done = True

    @property
    def observation_size(self) -> int:
        return self.size * self.size

    @property
    def num_actions(self) -> int:
        return NUM_ACTIONS

    @property
    def size_label(self) -> int:
        return self.size

    def _observation(self) -> np.ndarray:
        obs = np.zeros(self.observation_size, dtype=np.float64)
        row = min(self.row, self.size - 1)
        obs[row * self.size + self.column] = 1.0
        return obs

    def reset(self) -> np.ndarray:
        self.row = 0
        self.column = 0
        self.done = False
        return self._observation()

    def is_right(self, action: int, row: Optional[int] = None, column: Optional[int] = None) -> bool:
        """Whether raw `action` means "right" at the given (default: current) cell"""
        row = self.row if row is None else row
        column = self.column if column is None else column
        return int(action) == int(self.action_map[row, column])

    def step(self, action: int) -> StepResult:
        """
        Advance one row

        Raises:
            ContractViolationError: If the episode has already ended
            InvalidArgumentError: If action is not 0 or 1
        """
        if self.done:
            raise ContractViolationError("step() called on a finished Deep Sea episode; call reset() first")
        if action not in (0, 1):
            raise InvalidArgumentError(f"action must be 0 or 1, got {action!r}")

        intended_right = self.is_right(action)
        executed_right = intended_right
        if self.stochastic and self._dynamics.random() < self.bad_prob:
            executed_right = not intended_right

        reward = 0.0
        if intended_right:
            reward -= self.move_cost
        if executed_right:
            if self.column == self.size - 1:
                reward += self.goal_reward
            self.column = min(self.column + 1, self.size - 1)
        else:
            self.column = max(self.column - 1, 0)

        self.row += 1
        self.done = self.row >= self.size
        return StepResult(self._observation(), reward, 0.0 if self.done else 1.0, self.done)


class BinaryTreeEnv:
    """
    Chain of L binary branches

    At every branch one action terminates with reward 0 and the other moves
    one branch further; passing the last branch pays 1.

    Args:
        depth: Number of branches L (>= 1)
        rng: Stream the per-branch action map is drawn from
    """

    name = "binary_tree"

    def __init__(self, depth: int, rng: RngStream, goal_reward: float = 1.0):
        if int(depth) != depth or depth < 1:
            raise InvalidArgumentError(f"Binary Tree depth must be an integer >= 1, got {depth}")
        self.depth = int(depth)
        self.goal_reward = float(goal_reward)
        self.action_map = rng.split("action_map").binomial(1, 0.5, size=self.depth).astype(bool)
        self.branch = 0
        self.done = True

    @property
    def observation_size(self) -> int:
        return self.depth + 1

    @property
    def num_actions(self) -> int:
        return NUM_ACTIONS

    @property
    def size_label(self) -> int:
        return self.depth

    def _observation(self) -> np.ndarray:
        obs = np.zeros(self.observation_size, dtype=np.float64)
        obs[self.depth if self.done else self.branch] = 1.0
        return obs

    def reset(self) -> np.ndarray:
        self.branch = 0
        self.done = False
        return self._observation()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise ContractViolationError("step() called on a finished Binary Tree episode; call reset() first")
        if action not in (0, 1):
            raise InvalidArgumentError(f"action must be 0 or 1, got {action!r}")

        reward = 0.0
        if int(action) == int(self.action_map[self.branch]):
            self.branch += 1
            if self.branch == self.depth:
                reward = self.goal_reward
                self.done = True
        else:
            self.done = True
        return StepResult(self._observation(), reward, 0.0 if self.done else 1.0, self.done)


Environment = Union[DeepSeaEnv, BinaryTreeEnv]


def deep_sea_optimal_return(size: int, stochastic: bool, unscaled_move_cost: float = 0.01, goal_reward: float = 1.0) -> float:
    """
    Exact optimal expected return by dynamic programming over (row, column)

    The action map only relabels actions, so the optimum depends on the
    intended direction alone.
    """
    p_bad = 1.0 / size if stochastic else 0.0
    cost = unscaled_move_cost / size
    value = np.zeros(size)  # value[col] at row + 1
    for _ in range(size):
        new_value = np.empty(size)
        for col in range(size):
            right_col = min(col + 1, size - 1)
            left_col = max(col - 1, 0)
            goal = goal_reward if col == size - 1 else 0.0
            go_right = goal + value[right_col]
            go_left = value[left_col]
            q_right = -cost + (1.0 - p_bad) * go_right + p_bad * go_left
            q_left = (1.0 - p_bad) * go_left + p_bad * go_right
            new_value[col] = max(q_right, q_left)
        value = new_value
    return float(value[0])


def optimal_return(env: Environment) -> float:
    """Exact optimal expected episode return of `env`"""
    if isinstance(env, DeepSeaEnv):
        if not env.stochastic:
            return env.goal_reward - env.size * env.move_cost
        return deep_sea_optimal_return(env.size, True, env.move_cost * env.size, env.goal_reward)
    if isinstance(env, BinaryTreeEnv):
        return env.goal_reward
    raise InvalidArgumentError(f"unknown environment type {type(env).__name__}")


def make_env(spec: Dict, rng: RngStream) -> Environment:
    """
    Build an environment from an `environment` config section

    Args:
        spec: Mapping with `name` ("deep_sea" | "binary_tree"), `size`, and
            for Deep Sea optionally `stochastic` and `unscaled_move_cost`
        rng: The run's environment stream
    """
    name = spec.get("name")
    if name == "deep_sea":
        return DeepSeaEnv(
            spec["size"],
            rng,
            stochastic=spec.get("stochastic", False),
            unscaled_move_cost=spec.get("unscaled_move_cost", 0.01),
        )
    if name == "binary_tree":
        return BinaryTreeEnv(spec["size"], rng)
    raise InvalidArgumentError(f"unknown environment {name!r}")
