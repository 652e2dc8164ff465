"""
Ensemble heads: agent configuration, per-head parameter sets, prior-augmented
Q-values and single-transition TD errors
"""
from dataclasses import dataclass, fields, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.config import AGENT_DEFAULTS
from tdu.exceptions import InvalidArgumentError
from tdu.nn import AdamState, MlpParams, RngStream, adam_init, mlp_forward, mlp_init
from tdu.replay import Transition

VARIANTS = ("tdu", "bdqn", "qu", "q_ucb", "qex", "cts", "tdu_bandit")

# Variants whose signal is a standard deviation across exploiter heads
SIGMA_VARIANTS = ("tdu", "qu", "q_ucb", "tdu_bandit")


@dataclass(frozen=True)
class TduConfig:
    """
    Hyper-parameters of the ensemble agent

    Heads 0..K-1 are exploiters and K..K+N-1 explorers. `target_update_period`
    counts optimizer steps of a head. `variant` selects the exploration signal.
    """

    num_exploiters: int = AGENT_DEFAULTS["num_exploiters"]
    num_explorers: int = AGENT_DEFAULTS["num_explorers"]
    beta: float = AGENT_DEFAULTS["beta"]
    prior_scale: float = AGENT_DEFAULTS["prior_scale"]
    discount: float = AGENT_DEFAULTS["discount"]
    mask_prob: float = AGENT_DEFAULTS["mask_prob"]
    noise_scale: float = AGENT_DEFAULTS["noise_scale"]
    batch_size: int = AGENT_DEFAULTS["batch_size"]
    learning_rate: float = AGENT_DEFAULTS["learning_rate"]
    adam_beta1: float = AGENT_DEFAULTS["adam_beta1"]
    adam_beta2: float = AGENT_DEFAULTS["adam_beta2"]
    adam_eps: float = AGENT_DEFAULTS["adam_eps"]
    sgd_period: int = AGENT_DEFAULTS["sgd_period"]
    target_update_period: int = AGENT_DEFAULTS["target_update_period"]
    min_replay_size: int = AGENT_DEFAULTS["min_replay_size"]
    replay_capacity: int = AGENT_DEFAULTS["replay_capacity"]
    hidden_sizes: Tuple[int, ...] = AGENT_DEFAULTS["hidden_sizes"]
    double_dqn: bool = AGENT_DEFAULTS["double_dqn"]
    epsilon: float = AGENT_DEFAULTS["epsilon"]
    bandit_eta: float = AGENT_DEFAULTS["bandit_eta"]
    shared_target_prior: bool = AGENT_DEFAULTS["shared_target_prior"]
    variant: str = "tdu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        min_k = 2 if self.variant in SIGMA_VARIANTS else 1
        if self.num_exploiters < min_k:
            errors.append(f"num_exploiters must be >= {min_k} for variant {self.variant!r}, got {self.num_exploiters}")
        if self.num_explorers < 0:
            errors.append(f"num_explorers must be >= 0, got {self.num_explorers}")
        if self.beta < 0:
            errors.append(f"beta must be >= 0, got {self.beta}")
        if self.prior_scale < 0:
            errors.append(f"prior_scale must be >= 0, got {self.prior_scale}")
        if not 0.0 < self.discount <= 1.0:
            errors.append(f"discount must lie in (0, 1], got {self.discount}")
        if not 0.0 <= self.mask_prob <= 1.0:
            errors.append(f"mask_prob must lie in [0, 1], got {self.mask_prob}")
        if self.noise_scale < 0:
            errors.append(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 0.0 <= self.epsilon <= 1.0:
            errors.append(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.bandit_eta < 0:
            errors.append(f"bandit_eta must be >= 0, got {self.bandit_eta}")
        if self.learning_rate <= 0:
            errors.append(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("batch_size", "sgd_period", "target_update_period", "replay_capacity"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.min_replay_size < 0:
            errors.append(f"min_replay_size must be >= 0, got {self.min_replay_size}")
        if any(h < 1 for h in self.hidden_sizes):
            errors.append(f"hidden_sizes must be positive, got {self.hidden_sizes}")
        if errors:
            raise InvalidArgumentError("; ".join(errors))

    @property
    def ensemble_size(self) -> int:
        return self.num_exploiters + self.num_explorers

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def with_overrides(self, **overrides) -> "TduConfig":
        return replace(self, **overrides)


@dataclass
class Head:
    """
    One ensemble member

    `prior` and `prior_target` are fixed random networks added with weight
    `prior_scale`; they never receive updates.
    """

    online: MlpParams
    target: MlpParams
    prior: MlpParams
    prior_target: MlpParams
    adam: AdamState
    prior_scale: float
    step: int = 0


@dataclass
class EnsembleState:
    """All heads plus the head currently driving behaviour"""

    heads: List[Head]
    num_exploiters: int
    active_head: int = 0
    total_steps: int = 0
    episodes: int = 0

    @property
    def ensemble_size(self) -> int:
        return len(self.heads)

    def is_explorer(self, head: int) -> bool:
        return head >= self.num_exploiters


def init_head(index: int, layer_sizes: Sequence[int], config: TduConfig, rng: RngStream) -> Head:
    """Initialise head `index` from named child streams of the init stream"""
    online = mlp_init(layer_sizes, rng.split(f"online-{index}"))
    prior = mlp_init(layer_sizes, rng.split(f"prior-{index}"))
    prior_target = prior if config.shared_target_prior else mlp_init(layer_sizes, rng.split(f"prior-target-{index}"))
    adam = adam_init(online, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return Head(
        online=online,
        target=online.copy(),
        prior=prior,
        prior_target=prior_target,
        adam=adam,
        prior_scale=config.prior_scale,
    )


def init_ensemble(observation_size: int, num_actions: int, config: TduConfig, rng: RngStream) -> EnsembleState:
    layer_sizes = [observation_size, *config.hidden_sizes, num_actions]
    heads = [init_head(h, layer_sizes, config, rng) for h in range(config.ensemble_size)]
    return EnsembleState(heads=heads, num_exploiters=config.num_exploiters)


def q_value(head: Head, obs: np.ndarray) -> np.ndarray:
    """Online value plus scaled prior: Q_online(obs) + lambda * P(obs)"""
    out = mlp_forward(head.online, obs)
    if head.prior_scale == 0.0:
        return out
    return out + head.prior_scale * mlp_forward(head.prior, obs)


def target_q_value(head: Head, obs: np.ndarray) -> np.ndarray:
    """Target value plus scaled target prior"""
    out = mlp_forward(head.target, obs)
    if head.prior_scale == 0.0:
        return out
    return out + head.prior_scale * mlp_forward(head.prior_target, obs)


def sync_target(head: Head) -> None:
    """
    Copy the online function into the target

    The prior travels with the online network, so after the first sync the
    target prior is the online prior; the initial distinct target prior only
    lives until then.
    """
    head.target = head.online.copy()
    head.prior_target = head.prior


def td_error(
    head: Head,
    transition: Transition,
    discount: float,
    reward_override: Optional[float] = None,
    double_dqn: bool = True,
) -> float:
    """
    TD error of one transition for one head

    Args:
        head: Head to evaluate
        transition: Stored step; its `discount` is the episode continuation flag
        discount: Agent gamma
        reward_override: Replaces the stored reward when given
        double_dqn: Pick the bootstrap action with the online network and
            evaluate it with the target network

    Returns:
        r + gamma * d * Q_target(s', a*) - Q(s, a)
    """
    reward = transition.reward if reward_override is None else reward_override
    q_sa = q_value(head, transition.obs)[int(transition.action)]
    next_target = target_q_value(head, transition.next_obs)
    if double_dqn:
        bootstrap = next_target[int(np.argmax(q_value(head, transition.next_obs)))]
    else:
        bootstrap = float(np.max(next_target))
    return float(reward + discount * transition.discount * bootstrap - q_sa)


def greedy_action(q: np.ndarray) -> int:
    """Argmax with ties going to the lowest index"""
    return int(np.argmax(q))
