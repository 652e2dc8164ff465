"""
Tests for configuration loading, overrides and grid expansion
"""
import pytest

from tdu.exceptions import ConfigError
from tdu.settings import build_config, load_config, parse_set_items


def write_yaml(tmp_path, text: str):
    path = tmp_path / "experiment.yaml"
    path.write_text(text)
    return path


class TestDefaults:

    def test_agent_defaults(self):
        config = load_config()
        agent = config.agent
        assert agent.discount == 0.99
        assert agent.batch_size == 32
        assert agent.ensemble_size == 20
        assert agent.learning_rate == 1e-3
        assert agent.replay_capacity == 10_000
        assert agent.hidden_sizes == (64, 64)
        assert agent.variant == "tdu"

    def test_empty_file_gives_defaults(self, tmp_path):
        assert load_config(write_yaml(tmp_path, "")) == load_config()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")


class TestOverrides:

    def test_flag_overrides_file_and_pins_sweep(self, tmp_path):
        path = write_yaml(tmp_path, "agent:\n  beta: 0.1\nsweep:\n  betas: [0.0, 0.1, 1.0]\n")
        config = load_config(path, flags={"beta": 5})
        assert config.agent.beta == 5
        assert [spec.agent.beta for spec in config.run_specs()] == [5.0]

    def test_set_wins_over_flag(self):
        config = load_config(flags={"episodes": 10}, set_items=["experiment.episodes=20"])
        assert config.experiment.episodes == 20

    def test_set_parses_lists(self):
        config = load_config(set_items=["environment.sizes=[4, 6]", "agent.hidden_sizes=[8]"])
        assert tuple(config.environment.sizes) == (4, 6)
        assert config.agent.hidden_sizes == (8,)

    def test_unset_flags_ignored(self):
        assert load_config(flags={"beta": None, "seed": None}) == load_config()

    def test_scalar_size_flag(self):
        config = load_config(flags={"size": 12})
        assert tuple(config.environment.sizes) == (12,)

    @pytest.mark.parametrize("item", ["agent.beta", "beta=1", "agent.beta=[1,"])
    def test_malformed_set_items(self, item):
        with pytest.raises(ConfigError):
            parse_set_items([item])


class TestRejection:

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_config(write_yaml(tmp_path, "agent:\n  bogus: 1\n"))
        assert "agent.bogus" in str(info.value)

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            build_config({"training": {"steps": 5}})

    def test_invalid_value_becomes_config_error(self):
        with pytest.raises(ConfigError):
            load_config(set_items=["agent.discount=1.5"])

    def test_unknown_flag(self):
        with pytest.raises(ConfigError):
            load_config(flags={"learning_rate": 0.1})

    def test_non_mapping_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path, "- 1\n- 2\n"))

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path, "agent: [unclosed\n"))


class TestGrid:

    def test_expansion_order(self, experiment_raw):
        experiment_raw["environment"]["sizes"] = [4, 5]
        experiment_raw["sweep"].update({"variants": ["tdu", "bdqn"], "betas": [0.0, 1.0]})
        specs = build_config(experiment_raw).run_specs()
        assert len(specs) == 2 * 2 * 2 * 2
        keys = [(s.size, s.agent.variant, s.agent.beta, s.seed) for s in specs]
        assert keys == sorted(keys, key=lambda k: (k[0], ["tdu", "bdqn"].index(k[1]), k[2], k[3]))
        assert len({s.run_id for s in specs}) == len(specs)

    def test_num_explorers_keeps_ensemble_size(self):
        config = build_config({"sweep": {"num_explorers": [2, 10, 18]}})
        specs = config.run_specs()
        assert [(s.agent.num_exploiters, s.agent.num_explorers) for s in specs] == [(18, 2), (10, 10), (2, 18)]

    def test_budget_for_deep_sea(self):
        config = build_config({"experiment": {"budget_ceiling": 1000}})
        assert config.budget_for(6) == 64
        assert config.budget_for(12) == 1000
        explicit = build_config({"experiment": {"episodes": 7}})
        assert explicit.budget_for(12) == 7

    def test_budget_for_binary_tree(self):
        config = build_config({"environment": {"name": "binary_tree"}, "experiment": {"budget_ceiling": 500}})
        assert config.budget_for(3) == 500

    def test_censoring_flag(self):
        config = build_config({"environment": {"sizes": [12]}, "experiment": {"episodes": 100}})
        assert config.run_specs()[0].budget_below_horizon
        tree = build_config({"environment": {"name": "binary_tree", "sizes": [12]}, "experiment": {"episodes": 100}})
        assert not tree.run_specs()[0].budget_below_horizon


class TestValueTypes:

    @pytest.mark.parametrize("item", [
        "experiment.episodes=abc",
        "experiment.num_workers=two",
        "experiment.show_progress=3",
        "agent.batch_size=1.5",
        "agent.double_dqn=yes please",
        "environment.sizes=[4, x]",
        "sweep.seeds=[0, 1.5]",
        "bias.num_random_instances=many",
    ])
    def test_mistyped_value_is_config_error(self, item):
        with pytest.raises(ConfigError) as info:
            load_config(set_items=[item])
        assert item.split("=")[0] in str(info.value)

    def test_numeric_forms_are_converted(self):
        config = load_config(set_items=["agent.learning_rate=1e-3", "experiment.episodes=10.0", "agent.beta=2"])
        assert config.agent.learning_rate == 0.001
        assert config.experiment.episodes == 10 and isinstance(config.experiment.episodes, int)
        assert config.agent.beta == 2.0 and isinstance(config.agent.beta, float)

    def test_booleans_are_not_numbers(self):
        with pytest.raises(ConfigError):
            build_config({"agent": {"beta": True}})

    def test_optional_values_accept_null(self):
        config = load_config(set_items=["experiment.regret_window=null"])
        assert config.experiment.regret_window is None
