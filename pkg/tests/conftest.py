"""
Shared fixtures for the test suite
"""
import numpy as np
import pytest

from tdu.heads import TduConfig, init_ensemble
from tdu.nn import RngStream
from tdu.replay import Transition, TransitionBatch


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def small_config():
    """Two exploiters, two explorers, one small hidden layer"""
    return TduConfig(
        num_exploiters=2,
        num_explorers=2,
        hidden_sizes=(16,),
        batch_size=8,
        min_replay_size=8,
        replay_capacity=200,
    )


def make_batch(rng: RngStream, obs_size: int, num_heads: int, batch_size: int, num_actions: int = 2,
               mask_prob: float = 1.0) -> TransitionBatch:
    """Random batch with Gaussian observations"""
    transitions = []
    for _ in range(batch_size):
        transitions.append(Transition(
            obs=rng.normal(size=obs_size),
            action=int(rng.integers(0, num_actions)),
            reward=float(rng.normal()),
            discount=float(rng.binomial(1, 0.8)),
            next_obs=rng.normal(size=obs_size),
            mask=rng.binomial(1, mask_prob, size=num_heads).astype(np.float64),
            noise=rng.normal(size=num_heads),
        ))
    return TransitionBatch.from_transitions(transitions)


@pytest.fixture
def batch_factory():
    return make_batch


@pytest.fixture
def ensemble_factory():
    def build(config: TduConfig, obs_size: int, seed: int = 0, num_actions: int = 2):
        return init_ensemble(obs_size, num_actions, config, RngStream(seed).split("init")).heads
    return build


@pytest.fixture
def experiment_raw(tmp_path):
    """Raw config mapping for a tiny, fast Deep Sea sweep"""
    return {
        "environment": {"name": "deep_sea", "sizes": [4]},
        "agent": {
            "num_exploiters": 2,
            "num_explorers": 2,
            "hidden_sizes": [16],
            "batch_size": 8,
            "min_replay_size": 8,
            "replay_capacity": 500,
        },
        "sweep": {"seeds": [0, 1]},
        "experiment": {"episodes": 12, "output_dir": str(tmp_path / "results"), "show_progress": False},
    }
