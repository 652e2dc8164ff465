"""
Agents Module - Bootstrapped ensemble Q-learning with TD-error exploration

Checkpoint format (npz, format_version 1):
    meta                      JSON string: format_version, config fields,
                              observation_size, num_actions, active_head,
                              total_steps, episodes, sgd_steps, rng states,
                              count table and bandit statistics
    head{h}.{net}.W{i}        weight i of net in {online, target, prior, prior_target}
    head{h}.{net}.b{i}        bias i
    head{h}.adam.m.W{i} ...   Adam first moments (same naming for v)
    head{h}.step              optimizer steps of head h
    replay.{field}            replay ring storage (see ReplayBuffer.state_dict)
"""
import base64
import json
import sys
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent.parent))

from config.config import LOG_CONFIG, LOGS_DIR
from tdu.envs import StepResult
from tdu.exceptions import InvalidArgumentError
from tdu.exploration import CountTable, UcbHeadSampler, qu_sigma
from tdu.heads import EnsembleState, Head, TduConfig, greedy_action, init_ensemble, q_value, sync_target
from tdu.losses import LossOutput, tdu_loss
from tdu.nn import AdamState, MlpParams, RngStream, adam_step
from tdu.replay import ReplayBuffer, Transition

logger.add(
    LOGS_DIR / "agents.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

CHECKPOINT_FORMAT_VERSION = 1
NETS = ("online", "target", "prior", "prior_target")

LossFn = Callable[..., LossOutput]


class EnsembleAgent:
    """
    K exploiter heads and N explorer heads sharing one replay buffer

    One head, drawn at every episode start, acts greedily for the whole
    episode. Training starts once the buffer holds `min_replay_size`
    transitions and runs every `sgd_period` environment steps.

    Args:
        config: Agent hyper-parameters
        observation_size: Length of observation vectors
        num_actions: Number of discrete actions
        rng: Agent stream; split into init, masks, noise, head, replay, epsilon
        loss_fn: Loss used by train_step (defaults to tdu_loss)
    """

    def __init__(
        self,
        config: TduConfig,
        observation_size: int,
        num_actions: int,
        rng: RngStream,
        loss_fn: LossFn = tdu_loss,
    ):
        self.config = config
        self.observation_size = int(observation_size)
        self.num_actions = int(num_actions)
        self.loss_fn = loss_fn
        self.rngs: Dict[str, RngStream] = {
            name: rng.split(name) for name in ("masks", "noise", "head", "replay", "epsilon")
        }
        self.state: EnsembleState = init_ensemble(observation_size, num_actions, config, rng.split("init"))
        self.buffer = ReplayBuffer(config.replay_capacity, config.ensemble_size)
        self.counts: Optional[CountTable] = CountTable() if config.variant == "cts" else None
        self.bandit: Optional[UcbHeadSampler] = (
            UcbHeadSampler(config.ensemble_size, config.bandit_eta) if config.variant == "tdu_bandit" else None
        )
        self.sgd_steps = 0
        self.last_loss: Optional[float] = None
        logger.debug(
            f"EnsembleAgent variant={config.variant} K={config.num_exploiters} N={config.num_explorers} "
            f"beta={config.beta} lambda={config.prior_scale}"
        )

    @property
    def heads(self):
        return self.state.heads

    def select_head(self) -> int:
        """Uniform over all heads, or UCB1 for the bandit variant"""
        if self.bandit is not None:
            return self.bandit.select()
        return int(self.rngs["head"].integers(0, self.config.ensemble_size))

    def begin_episode(self) -> int:
        self.state.active_head = self.select_head()
        self.state.episodes += 1
        return self.state.active_head

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        """(H, A) prior-augmented Q-values of every head"""
        return np.stack([q_value(head, obs) for head in self.heads])

    def act(self, obs: np.ndarray, head: Optional[int] = None) -> int:
        """
        Greedy action of the active (or given) head, lowest index on ties

        The Q+UCB variant instead maximises the ensemble mean plus beta times
        the spread of Q-values across heads.
        """
        if self.config.epsilon > 0.0 and self.rngs["epsilon"].random() < self.config.epsilon:
            return int(self.rngs["epsilon"].integers(0, self.num_actions))
        if self.config.variant == "q_ucb":
            qs = self.q_values(obs)
            return greedy_action(qs.mean(axis=0) + self.config.beta * qu_sigma(qs, axis=0))
        index = self.state.active_head if head is None else int(head)
        if not 0 <= index < self.config.ensemble_size:
            raise InvalidArgumentError(f"head index {index} out of range")
        return greedy_action(q_value(self.heads[index], obs))

    def observe(self, obs: np.ndarray, action: int, step: StepResult) -> bool:
        """
        Store a transition and train if due

        Returns:
            True when an optimizer step was taken
        """
        size = self.config.ensemble_size
        mask = self.rngs["masks"].binomial(1, self.config.mask_prob, size=size).astype(np.float64)
        noise = self.rngs["noise"].normal(0.0, 1.0, size=size)
        self.buffer.add(
            Transition(
                obs=np.asarray(obs, dtype=np.float64),
                action=int(action),
                reward=float(step.reward),
                discount=float(step.discount),
                next_obs=np.asarray(step.observation, dtype=np.float64),
                mask=mask,
                noise=noise,
            )
        )
        if self.counts is not None:
            self.counts.increment(obs, action)
        if self.bandit is not None:
            self.bandit.update(self.state.active_head, step.reward)
        self.state.total_steps += 1
        return self.train_step()

    def train_step(self) -> bool:
        """One optimizer step per head when the replay and SGD gates allow it"""
        if self.buffer.size == 0 or self.buffer.size < self.config.min_replay_size:
            return False
        if self.state.total_steps % self.config.sgd_period != 0:
            return False
        batch = self.buffer.sample(self.config.batch_size, self.rngs["replay"])
        out = self.loss_fn(self.heads, batch, self.config, counts=self.counts)
        for head, grad in zip(self.heads, out.grads):
            head.online, head.adam = adam_step(head.online, grad, head.adam)
            head.step += 1
            if head.step % self.config.target_update_period == 0:
                sync_target(head)
        self.sgd_steps += 1
        self.last_loss = out.loss
        return True


def _put_params(arrays: Dict[str, np.ndarray], prefix: str, params: MlpParams) -> None:
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"{prefix}.W{i}"] = w
        arrays[f"{prefix}.b{i}"] = b


def _get_params(archive, prefix: str, n_layers: int) -> MlpParams:
    return MlpParams(
        tuple(np.array(archive[f"{prefix}.W{i}"]) for i in range(n_layers)),
        tuple(np.array(archive[f"{prefix}.b{i}"]) for i in range(n_layers)),
    )


def save_checkpoint(agent: EnsembleAgent, path: Path) -> Path:
    """
    Write the full agent state to an npz archive

    Args:
        agent: Agent to save
        path: Destination file

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_layers = len(agent.heads[0].online.weights)
    arrays: Dict[str, np.ndarray] = {}
    adam_meta = []
    for h, head in enumerate(agent.heads):
        for net in NETS:
            _put_params(arrays, f"head{h}.{net}", getattr(head, net))
        _put_params(arrays, f"head{h}.adam.m", head.adam.m)
        _put_params(arrays, f"head{h}.adam.v", head.adam.v)
        arrays[f"head{h}.step"] = np.int64(head.step)
        adam_meta.append({"t": head.adam.t, "lr": head.adam.lr, "beta1": head.adam.beta1,
                          "beta2": head.adam.beta2, "eps": head.adam.eps, "prior_scale": head.prior_scale})
    for key, value in agent.buffer.state_dict().items():
        arrays[f"replay.{key}"] = value

    config = {name: getattr(agent.config, name) for name in TduConfig.field_names()}
    config["hidden_sizes"] = list(config["hidden_sizes"])
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config,
        "observation_size": agent.observation_size,
        "num_actions": agent.num_actions,
        "num_layers": n_layers,
        "active_head": agent.state.active_head,
        "total_steps": agent.state.total_steps,
        "episodes": agent.state.episodes,
        "sgd_steps": agent.sgd_steps,
        "adam": adam_meta,
        "rngs": {name: stream.state_dict() for name, stream in agent.rngs.items()},
        "counts": None if agent.counts is None else [
            [base64.b64encode(obs).decode("ascii"), action, n] for (obs, action), n in agent.counts.items()
        ],
        "bandit": None if agent.bandit is None else {
            "values": agent.bandit.values.tolist(), "counts": agent.bandit.counts.tolist(),
        },
    }
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"✓ Saved checkpoint ({len(agent.heads)} heads, {agent.buffer.size:,} transitions) to {path}")
    return path


def load_checkpoint(path: Path, loss_fn: LossFn = tdu_loss) -> EnsembleAgent:
    """
    Restore an agent written by `save_checkpoint`

    Raises:
        InvalidArgumentError: On an unknown format version
    """
    with np.load(Path(path), allow_pickle=False) as archive:
        meta = json.loads(archive["meta"].item())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        config = TduConfig(**meta["config"])
        agent = EnsembleAgent(config, meta["observation_size"], meta["num_actions"], RngStream(0), loss_fn=loss_fn)
        n_layers = meta["num_layers"]
        heads = []
        for h, adam_meta in enumerate(meta["adam"]):
            nets = {net: _get_params(archive, f"head{h}.{net}", n_layers) for net in NETS}
            adam = AdamState(
                m=_get_params(archive, f"head{h}.adam.m", n_layers),
                v=_get_params(archive, f"head{h}.adam.v", n_layers),
                t=adam_meta["t"], lr=adam_meta["lr"], beta1=adam_meta["beta1"],
                beta2=adam_meta["beta2"], eps=adam_meta["eps"],
            )
            heads.append(Head(adam=adam, prior_scale=adam_meta["prior_scale"],
                              step=int(archive[f"head{h}.step"]), **nets))
        replay_state = {key[len("replay."):]: archive[key] for key in archive.files if key.startswith("replay.")}
        agent.buffer = ReplayBuffer.from_state_dict(replay_state)

    agent.state = EnsembleState(
        heads=heads,
        num_exploiters=config.num_exploiters,
        active_head=meta["active_head"],
        total_steps=meta["total_steps"],
        episodes=meta["episodes"],
    )
    agent.sgd_steps = meta["sgd_steps"]
    agent.rngs = {name: RngStream.from_state_dict(state) for name, state in meta["rngs"].items()}
    if meta["counts"] is not None:
        agent.counts = CountTable.from_items(
            ((base64.b64decode(obs), int(action)), n) for obs, action, n in meta["counts"]
        )
    if meta["bandit"] is not None:
        agent.bandit.values = np.array(meta["bandit"]["values"], dtype=np.float64)
        agent.bandit.counts = np.array(meta["bandit"]["counts"], dtype=np.int64)
    logger.info(f"✓ Loaded checkpoint from {path}")
    return agent
