"""
Ensemble TD losses with exact per-head gradients

`tdu_loss` trains exploiter heads on the extrinsic reward and explorer heads
on the reward augmented by beta times the variant's exploration signal.
The signal, targets and priors are constants for differentiation.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from tdu.exceptions import InvalidArgumentError
from tdu.exploration import CountTable, qex_reward, qu_sigma
from tdu.heads import Head, TduConfig, q_value, target_q_value
from tdu.nn import MlpParams, mlp_backward, mlp_forward, mlp_forward_cached
from tdu.replay import TransitionBatch


@dataclass(frozen=True)
class LossOutput:
    """Loss value, one gradient per head, TD errors (B, H) and the signal (B,)"""

    loss: float
    grads: Tuple[MlpParams, ...]
    td_errors: np.ndarray
    signal: np.ndarray


def tdu_sigma(td_errors: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Bessel-corrected standard deviation of TD errors across heads

    Args:
        td_errors: K TD errors, or an array with heads along `axis`

    Raises:
        InvalidArgumentError: If fewer than two errors are given
    """
    deltas = np.asarray(td_errors, dtype=np.float64)
    if deltas.ndim == 0 or deltas.shape[axis] < 2:
        raise InvalidArgumentError("TD-error spread needs at least two heads")
    return np.std(deltas, axis=axis, ddof=1)


def _bootstrap(head: Head, next_obs: np.ndarray, double_dqn: bool) -> np.ndarray:
    next_target = target_q_value(head, next_obs)
    rows = np.arange(next_target.shape[0])
    if double_dqn:
        return next_target[rows, np.argmax(q_value(head, next_obs), axis=1)]
    return np.max(next_target, axis=1)


def exploration_signal(
    variant: str,
    exploiter_deltas: np.ndarray,
    exploiter_q_sa: np.ndarray,
    batch: TransitionBatch,
    counts: Optional[CountTable] = None,
) -> np.ndarray:
    """
    Per-transition intrinsic signal for a variant

    Args:
        variant: Agent variant name
        exploiter_deltas: (B, K) TD errors of exploiter heads
        exploiter_q_sa: (B, K) exploiter Q-values at the stored action
        batch: Sampled transitions
        counts: Visit counts, required for "cts"

    Returns:
        (B,) signal; zeros for variants without an intrinsic reward
    """
    if variant in ("tdu", "tdu_bandit"):
        return tdu_sigma(exploiter_deltas, axis=1)
    if variant == "qu":
        return qu_sigma(exploiter_q_sa, axis=1)
    if variant == "qex":
        return qex_reward(exploiter_deltas.mean(axis=1))
    if variant == "cts":
        if counts is None:
            raise InvalidArgumentError("variant 'cts' needs a count table")
        return counts.bonuses(batch.obs, batch.action)
    return np.zeros(len(batch), dtype=np.float64)


def tdu_loss(
    heads: Sequence[Head],
    batch: TransitionBatch,
    config: TduConfig,
    frozen_signal: Optional[np.ndarray] = None,
    counts: Optional[CountTable] = None,
) -> LossOutput:
    """
    Masked bootstrapped TD loss with the explorer reward augmentation

    loss = sum_b [sum_k m_k delta_k^2 + sum_j m_j delta~_j^2] / (2 H B)

    Args:
        heads: Exploiters first, then explorers
        batch: Transitions with per-head masks and noise
        config: Agent hyper-parameters
        frozen_signal: Use this (B,) signal instead of recomputing it
        counts: Visit counts for the count-bonus variant

    Returns:
        LossOutput with exact gradients w.r.t. every head's online params
    """
    n_heads = len(heads)
    n_batch = len(batch)
    if n_batch == 0:
        raise InvalidArgumentError("loss needs a non-empty batch")
    if batch.mask.shape[1] != n_heads:
        raise InvalidArgumentError(f"batch carries {batch.mask.shape[1]} mask columns for {n_heads} heads")
    k = config.num_exploiters
    rows = np.arange(n_batch)

    caches, q_sa, targets = [], [], []
    for h, head in enumerate(heads):
        online_out, cache = mlp_forward_cached(head.online, batch.obs)
        q_all = online_out
        if head.prior_scale != 0.0:
            q_all = online_out + head.prior_scale * mlp_forward(head.prior, batch.obs)
        caches.append(cache)
        q_sa.append(q_all[rows, batch.action])
        reward = batch.reward + config.noise_scale * batch.noise[:, h]
        targets.append((reward, config.discount * batch.discount * _bootstrap(head, batch.next_obs, config.double_dqn)))

    deltas = np.empty((n_batch, n_heads), dtype=np.float64)
    for h in range(k):
        reward, boot = targets[h]
        deltas[:, h] = (reward + boot) - q_sa[h]

    if frozen_signal is not None:
        signal = np.asarray(frozen_signal, dtype=np.float64)
    elif n_heads > k:
        signal = exploration_signal(config.variant, deltas[:, :k], np.stack(q_sa[:k], axis=1), batch, counts)
    else:
        signal = np.zeros(n_batch, dtype=np.float64)

    for h in range(k, n_heads):
        reward, boot = targets[h]
        deltas[:, h] = ((reward + config.beta * signal) + boot) - q_sa[h]

    masked = batch.mask * deltas
    loss = float(np.sum(masked * deltas) / (2.0 * n_heads * n_batch))

    grads = []
    for h, head in enumerate(heads):
        d_out = np.zeros((n_batch, head.online.weights[-1].shape[0]), dtype=np.float64)
        d_out[rows, batch.action] = -masked[:, h] / (n_heads * n_batch)
        grads.append(mlp_backward(head.online, caches[h], d_out))
    return LossOutput(loss=loss, grads=tuple(grads), td_errors=deltas, signal=signal)


def bootstrapped_dqn_loss(
    heads: Sequence[Head],
    batch: TransitionBatch,
    config: TduConfig,
    frozen_signal: Optional[np.ndarray] = None,
    counts: Optional[CountTable] = None,
) -> LossOutput:
    """
    Plain masked Bootstrapped DQN loss; every head trains on the stored reward

    Accepts the same arguments as `tdu_loss` and ignores the exploration ones.
    """
    n_heads = len(heads)
    n_batch = len(batch)
    rows = np.arange(n_batch)
    deltas = np.empty((n_batch, n_heads), dtype=np.float64)
    grads = []
    total = 0.0
    for h, head in enumerate(heads):
        out, cache = mlp_forward_cached(head.online, batch.obs)
        q = out
        if head.prior_scale != 0.0:
            q = out + head.prior_scale * mlp_forward(head.prior, batch.obs)
        boot = config.discount * batch.discount * _bootstrap(head, batch.next_obs, config.double_dqn)
        delta = (batch.reward + boot) - q[rows, batch.action]
        deltas[:, h] = delta
        weighted = batch.mask[:, h] * delta
        total += float(np.sum(weighted * delta))
        d_out = np.zeros_like(out)
        d_out[rows, batch.action] = -weighted / (n_heads * n_batch)
        grads.append(mlp_backward(head.online, cache, d_out))
    return LossOutput(
        loss=total / (2.0 * n_heads * n_batch),
        grads=tuple(grads),
        td_errors=deltas,
        signal=np.zeros(n_batch, dtype=np.float64),
    )
