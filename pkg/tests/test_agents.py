"""
Tests for the ensemble agent: acting, training gates, reductions and checkpoints
"""
import copy
from dataclasses import replace

import numpy as np
import pytest

from tdu.agents import EnsembleAgent, load_checkpoint, save_checkpoint
from tdu.envs import DeepSeaEnv
from tdu.exceptions import InvalidArgumentError
from tdu.exploration import qu_sigma
from tdu.heads import TduConfig, greedy_action
from tdu.losses import bootstrapped_dqn_loss, tdu_loss
from tdu.nn import RngStream, mlp_forward


def interact(agent: EnsembleAgent, env, steps: int, obs=None, in_episode: bool = False):
    """Drive the agent for `steps` environment steps; returns (obs, in_episode)"""
    for _ in range(steps):
        if not in_episode:
            obs = env.reset()
            agent.begin_episode()
            in_episode = True
        action = agent.act(obs)
        step = env.step(action)
        agent.observe(obs, action, step)
        obs = step.observation
        in_episode = not step.episode_done
    return obs, in_episode


def heads_equal(a: EnsembleAgent, b: EnsembleAgent) -> bool:
    return all(
        x.online.equals(y.online) and x.target.equals(y.target)
        for x, y in zip(a.heads, b.heads)
    )


class TestActing:

    def test_greedy_ties_go_to_lowest_index(self):
        assert greedy_action(np.array([1.0, 1.0])) == 0
        assert greedy_action(np.array([0.0, 2.0, 2.0])) == 1

    def test_head_selection_is_uniform(self):
        agent = EnsembleAgent(TduConfig(hidden_sizes=(4,)), 16, 2, RngStream(8))
        draws = 100_000
        counts = np.bincount([agent.select_head() for _ in range(draws)], minlength=20)
        expected = draws / 20
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        # chi-square critical value, 19 degrees of freedom, 1% level
        assert chi2 < 36.191

    def test_acts_with_active_head(self, small_config):
        agent = EnsembleAgent(small_config, 16, 2, RngStream(0))
        obs = np.eye(16)[0]
        head = agent.begin_episode()
        expected = greedy_action(agent.q_values(obs)[head])
        assert agent.act(obs) == expected

    def test_head_index_checked(self, small_config):
        agent = EnsembleAgent(small_config, 16, 2, RngStream(0))
        with pytest.raises(InvalidArgumentError):
            agent.act(np.eye(16)[0], head=7)

    def test_q_ucb_acts_on_ensemble_statistics(self, small_config):
        config = replace(small_config, variant="q_ucb", beta=2.0)
        agent = EnsembleAgent(config, 16, 2, RngStream(1))
        obs = np.eye(16)[3]
        qs = agent.q_values(obs)
        assert agent.act(obs) == greedy_action(qs.mean(axis=0) + 2.0 * qu_sigma(qs, axis=0))

    def test_epsilon_one_is_uniform(self, small_config):
        agent = EnsembleAgent(replace(small_config, epsilon=1.0), 16, 2, RngStream(2))
        agent.begin_episode()
        actions = {agent.act(np.eye(16)[0]) for _ in range(50)}
        assert actions == {0, 1}

    def test_bandit_tries_every_head_first(self, small_config):
        agent = EnsembleAgent(replace(small_config, variant="tdu_bandit"), 16, 2, RngStream(3))
        env = DeepSeaEnv(4, RngStream(3))
        picks = []
        for _ in range(small_config.ensemble_size):
            obs = env.reset()
            picks.append(agent.begin_episode())
            done = False
            while not done:
                action = agent.act(obs)
                step = env.step(action)
                agent.observe(obs, action, step)
                obs, done = step.observation, step.episode_done
        assert picks == list(range(small_config.ensemble_size))


class TestTraining:

    def test_no_training_before_min_replay(self, small_config):
        config = replace(small_config, min_replay_size=20)
        agent = EnsembleAgent(config, 16, 2, RngStream(0))
        env = DeepSeaEnv(4, RngStream(0))
        state = interact(agent, env, 19)
        assert agent.sgd_steps == 0
        assert agent.last_loss is None
        interact(agent, env, 1, *state)
        assert agent.sgd_steps == 1
        assert agent.last_loss is not None

    def test_sgd_period_gate(self, small_config):
        config = replace(small_config, min_replay_size=4, sgd_period=3)
        agent = EnsembleAgent(config, 16, 2, RngStream(0))
        env = DeepSeaEnv(4, RngStream(0))
        interact(agent, env, 30)
        # steps 6, 9, ..., 30 pass both gates
        assert agent.sgd_steps == 9

    def test_target_sync_period(self, small_config):
        config = replace(small_config, min_replay_size=1, target_update_period=4)
        agent = EnsembleAgent(config, 16, 2, RngStream(0))
        env = DeepSeaEnv(4, RngStream(0))
        obs, live = interact(agent, env, 3)
        assert all(h.step == 3 for h in agent.heads)
        assert not any(h.target.equals(h.online) for h in agent.heads)
        interact(agent, env, 1, obs, live)
        assert all(h.target.equals(h.online) for h in agent.heads)

    def test_priors_never_change(self, small_config):
        config = replace(small_config, min_replay_size=4, noise_scale=0.1)
        agent = EnsembleAgent(config, 16, 2, RngStream(12))
        priors = [h.prior.copy() for h in agent.heads]
        interact(agent, DeepSeaEnv(4, RngStream(12)), 150)
        assert agent.sgd_steps > 100
        assert all(h.prior.equals(p) for h, p in zip(agent.heads, priors))

    def test_target_stale_between_syncs(self, small_config):
        config = replace(small_config, min_replay_size=1, target_update_period=4)
        agent = EnsembleAgent(config, 16, 2, RngStream(13))
        env = DeepSeaEnv(4, RngStream(13))
        obs = np.eye(16)[5]
        synced = [h.target.copy() for h in agent.heads]
        state = (None, False)
        for _ in range(12):
            state = interact(agent, env, 1, *state)
            for h, head in enumerate(agent.heads):
                if head.step % 4 == 0:
                    assert head.target.equals(head.online)
                    assert head.prior_target.equals(head.prior)
                    synced[h] = head.target.copy()
                else:
                    assert head.target.equals(synced[h])
                    assert not head.online.equals(synced[h])
                    np.testing.assert_array_equal(
                        mlp_forward(head.target, obs), mlp_forward(synced[h], obs)
                    )

    def test_target_prior_follows_online_prior_after_sync(self, small_config):
        config = replace(small_config, min_replay_size=1, target_update_period=4)
        agent = EnsembleAgent(config, 16, 2, RngStream(14))
        assert not any(h.prior_target.equals(h.prior) for h in agent.heads)
        interact(agent, DeepSeaEnv(4, RngStream(14)), 4)
        assert all(h.prior_target.equals(h.prior) for h in agent.heads)

    def test_masks_follow_probability(self, small_config):
        config = replace(small_config, mask_prob=0.5, min_replay_size=10_000, replay_capacity=2000)
        agent = EnsembleAgent(config, 16, 2, RngStream(4))
        interact(agent, DeepSeaEnv(4, RngStream(4)), 1000)
        masks = np.array([t.mask for t in agent.buffer])
        assert set(np.unique(masks)) <= {0.0, 1.0}
        assert masks.mean() == pytest.approx(0.5, abs=0.03)

    def test_cts_counts_visits(self, small_config):
        agent = EnsembleAgent(replace(small_config, variant="cts"), 16, 2, RngStream(5))
        interact(agent, DeepSeaEnv(4, RngStream(5)), 8)
        assert sum(n for _, n in agent.counts.items()) == 8

    def test_same_seed_same_parameters(self, small_config):
        agents = []
        for _ in range(2):
            agent = EnsembleAgent(small_config, 16, 2, RngStream(6).split("agent"))
            interact(agent, DeepSeaEnv(4, RngStream(6).split("env")), 120)
            agents.append(agent)
        assert agents[0].sgd_steps > 0
        assert heads_equal(*agents)


class TestBootstrappedDqnReduction:

    @pytest.mark.parametrize("exploiters,explorers", [(4, 0), (2, 2)])
    def test_bit_identical_trajectories(self, exploiters, explorers):
        config = TduConfig(
            num_exploiters=exploiters,
            num_explorers=explorers,
            beta=0.0,
            prior_scale=0.0,
            noise_scale=0.0,
            hidden_sizes=(32, 32),
            min_replay_size=32,
        )
        env_a = DeepSeaEnv(6, RngStream(10).split("env"))
        env_b = DeepSeaEnv(6, RngStream(10).split("env"))
        tdu = EnsembleAgent(config, env_a.observation_size, 2, RngStream(10).split("agent"), loss_fn=tdu_loss)
        ref = EnsembleAgent(config, env_b.observation_size, 2, RngStream(10).split("agent"),
                            loss_fn=bootstrapped_dqn_loss)
        state_a, state_b = (None, False), (None, False)
        for _ in range(100):
            state_a = interact(tdu, env_a, 10, *state_a)
            state_b = interact(ref, env_b, 10, *state_b)
            assert heads_equal(tdu, ref)
        assert tdu.sgd_steps == ref.sgd_steps == 1000 - 31


class TestCheckpoint:

    @pytest.mark.parametrize("variant", ["tdu", "cts", "tdu_bandit"])
    def test_round_trip_continues_identically(self, small_config, tmp_path, variant):
        config = replace(small_config, variant=variant, mask_prob=0.5, noise_scale=0.1)
        agent = EnsembleAgent(config, 16, 2, RngStream(7))
        env = DeepSeaEnv(4, RngStream(7))
        state = interact(agent, env, 50)

        path = save_checkpoint(agent, tmp_path / "agent.npz")
        restored = load_checkpoint(path)
        env_copy = copy.deepcopy(env)
        assert heads_equal(agent, restored)
        assert restored.state.total_steps == agent.state.total_steps
        assert restored.state.active_head == agent.state.active_head

        interact(agent, env, 40, *state)
        interact(restored, env_copy, 40, *state)
        assert heads_equal(agent, restored)
        for a, b in zip(agent.heads, restored.heads):
            assert a.adam.m.equals(b.adam.m) and a.adam.t == b.adam.t

    def test_unknown_format_version(self, small_config, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, meta=np.array('{"format_version": 99}'))
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(path)
