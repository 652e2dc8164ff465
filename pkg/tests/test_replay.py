"""
Tests for the replay buffer
"""
import numpy as np
import pytest

from tdu.exceptions import InvalidArgumentError, PreconditionError
from tdu.nn import RngStream
from tdu.replay import ReplayBuffer, Transition

# chi-square critical value, 99 degrees of freedom, 1% level
CHI2_99_1PCT = 134.642


def transition(i: int, heads: int = 3, obs_size: int = 4) -> Transition:
    obs = np.zeros(obs_size)
    obs[i % obs_size] = 1.0
    return Transition(
        obs=obs,
        action=i % 2,
        reward=float(i),
        discount=1.0,
        next_obs=obs,
        mask=np.ones(heads),
        noise=np.full(heads, 0.1 * i),
    )


class TestReplayBuffer:

    def test_fifo_eviction(self):
        buffer = ReplayBuffer(capacity=5, ensemble_size=3)
        for i in range(8):
            buffer.add(transition(i))
        assert len(buffer) == 5
        assert buffer.insertions == 8
        assert [t.reward for t in buffer] == [3.0, 4.0, 5.0, 6.0, 7.0]

    def test_iteration_before_full(self):
        buffer = ReplayBuffer(capacity=5, ensemble_size=3)
        for i in range(3):
            buffer.add(transition(i))
        assert [t.reward for t in buffer] == [0.0, 1.0, 2.0]

    def test_sample_empty(self):
        with pytest.raises(PreconditionError):
            ReplayBuffer(4, 3).sample(2, RngStream(0))

    def test_sample_batch_fields(self):
        buffer = ReplayBuffer(capacity=10, ensemble_size=3)
        for i in range(10):
            buffer.add(transition(i))
        batch = buffer.sample(6, RngStream(0))
        assert len(batch) == 6
        assert batch.obs.shape == (6, 4)
        assert batch.mask.shape == (6, 3)
        np.testing.assert_allclose(batch.noise[:, 0], 0.1 * batch.reward)

    def test_sampling_is_uniform(self):
        buffer = ReplayBuffer(capacity=100, ensemble_size=3)
        for i in range(150):
            buffer.add(transition(i))
        draws = 20000
        indices = buffer.sample_indices(draws, RngStream(2024).split("replay"))
        counts = np.bincount(indices, minlength=100)
        expected = draws / 100
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < CHI2_99_1PCT

    def test_mask_length_checked(self):
        buffer = ReplayBuffer(4, 3)
        bad = transition(0)
        with pytest.raises(InvalidArgumentError):
            buffer.add(Transition(bad.obs, 0, 0.0, 1.0, bad.next_obs, np.ones(2), np.zeros(3)))

    def test_mask_must_be_binary(self):
        buffer = ReplayBuffer(4, 3)
        bad = transition(0)
        with pytest.raises(InvalidArgumentError):
            buffer.add(Transition(bad.obs, 0, 0.0, 1.0, bad.next_obs, np.array([1.0, 0.5, 0.0]), np.zeros(3)))

    def test_observation_size_fixed(self):
        buffer = ReplayBuffer(4, 3)
        buffer.add(transition(0))
        with pytest.raises(InvalidArgumentError):
            buffer.add(transition(1, obs_size=5))

    @pytest.mark.parametrize("capacity,heads", [(0, 2), (4, 0)])
    def test_invalid_construction(self, capacity, heads):
        with pytest.raises(InvalidArgumentError):
            ReplayBuffer(capacity, heads)

    def test_state_dict_restores_contents_and_order(self):
        buffer = ReplayBuffer(capacity=6, ensemble_size=3)
        for i in range(9):
            buffer.add(transition(i))
        restored = ReplayBuffer.from_state_dict(buffer.state_dict())
        assert [t.reward for t in restored] == [t.reward for t in buffer]
        a = buffer.sample(5, RngStream(1))
        b = restored.sample(5, RngStream(1))
        np.testing.assert_array_equal(a.obs, b.obs)
        np.testing.assert_array_equal(a.noise, b.noise)
        restored.add(transition(9))
        buffer.add(transition(9))
        assert [t.reward for t in restored] == [t.reward for t in buffer]
