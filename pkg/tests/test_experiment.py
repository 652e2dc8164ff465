"""
Tests for single runs, sweeps, result files and the bias suite
"""
import re
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import yaml
from loguru import logger

from config.config import LOG_CONFIG
from tdu.exceptions import ConfigError
from tdu.experiment import (
    SUMMARY_COLUMNS,
    SweepRunner,
    load_results,
    load_summary,
    run_bias_suite,
    run_single,
    run_streams,
    run_sweep,
    score_table,
)
from tdu.metrics import RUN_COLUMNS, read_csv
from tdu.settings import build_config


def tree_bytes(root):
    """Relative path -> bytes for every file under root"""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestRunSingle:

    def test_rows_and_regret(self, experiment_raw):
        spec = build_config(experiment_raw).run_specs()[0]
        result = run_single(spec)
        assert result.ok
        assert len(result.rows) == 12
        assert result.optimal_return == pytest.approx(0.99)
        first = result.rows[0]
        assert list(first) == RUN_COLUMNS
        for row in result.rows:
            assert row["regret"] == pytest.approx(0.99 - row["return"], abs=1e-12)
            assert row["episode_length"] == 4
        np.testing.assert_allclose(
            [r["avg_regret"] for r in result.rows],
            np.cumsum([r["regret"] for r in result.rows]) / np.arange(1, 13),
        )

    def test_identical_specs_identical_runs(self, experiment_raw):
        spec = build_config(experiment_raw).run_specs()[0]
        a, b = run_single(spec, keep_agent=True), run_single(spec, keep_agent=True)
        assert a.rows == b.rows
        assert a.sgd_steps == b.sgd_steps > 0
        assert all(x.online.equals(y.online) for x, y in zip(a.agent.heads, b.agent.heads))

    def test_env_stream_depends_on_size_only(self):
        a = run_streams(3, "deep_sea", 6)
        b = run_streams(3, "deep_sea", 8)
        assert a["agent"].integers(0, 2**31) == b["agent"].integers(0, 2**31)
        assert a["env"].integers(0, 2**31) != b["env"].integers(0, 2**31)

    def test_stop_on_retain(self, experiment_raw):
        experiment_raw["environment"] = {"name": "binary_tree", "sizes": [1]}
        experiment_raw["experiment"].update({"episodes": 200, "retain_window": 5, "stop_on_retain": True})
        spec = build_config(experiment_raw).run_specs()[0]
        result = run_single(spec)
        if result.retained_episode is not None:
            assert len(result.rows) == result.retained_episode + 4
            assert result.solved

    def test_censored_when_budget_below_horizon(self, experiment_raw):
        spec = build_config(experiment_raw).run_specs()[0]
        spec = replace(spec, env={**spec.env, "size": 20}, episodes=3)
        result = run_single(spec)
        assert spec.budget_below_horizon
        assert result.solve_episode is None
        assert result.censored and not result.solved


class TestSweep:

    def test_writes_documented_layout(self, experiment_raw, tmp_path):
        config = build_config(experiment_raw)
        assert run_sweep(config) == 0
        out = config.output_dir
        for name in ("config.yaml", "summary.csv", "aggregate.csv", "score.csv", "curves/deep_sea_4.svg"):
            assert (out / name).exists(), name
        assert len(list((out / "runs").glob("*.csv"))) == 2
        summary = load_summary(out)
        assert list(summary.columns) == SUMMARY_COLUMNS
        assert (summary["status"] == "ok").all()
        resolved = yaml.safe_load((out / "config.yaml").read_text())
        assert resolved["environment"]["sizes"] == [4]

    def test_reruns_are_byte_identical(self, experiment_raw, tmp_path):
        outputs = []
        for name in ("first", "second"):
            experiment_raw["experiment"]["output_dir"] = str(tmp_path / name)
            config = build_config(experiment_raw)
            assert run_sweep(config) == 0
            files = tree_bytes(config.output_dir)
            files.pop("config.yaml")
            outputs.append(files)
        assert outputs[0] == outputs[1]

    def test_worker_log_lines_arrive_whole(self, experiment_raw, tmp_path):
        log_path = tmp_path / "sweep.log"
        sink = logger.add(
            log_path,
            level="DEBUG",
            format="{time:YYYY-MM-DD HH:mm:ss} | {message}",
            enqueue=LOG_CONFIG["enqueue"],
        )
        try:
            experiment_raw["experiment"]["num_workers"] = 2
            assert run_sweep(build_config(experiment_raw)) == 0
        finally:
            logger.remove(sink)
        lines = log_path.read_text(encoding="utf-8").splitlines()
        assert LOG_CONFIG["enqueue"]
        assert lines
        assert all(re.match(r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2} \| \S", line) for line in lines)

    def test_worker_count_does_not_change_results(self, experiment_raw, tmp_path):
        outputs = []
        for workers in (1, 2):
            experiment_raw["experiment"].update({"num_workers": workers, "output_dir": str(tmp_path / f"w{workers}")})
            config = build_config(experiment_raw)
            assert run_sweep(config) == 0
            outputs.append(tree_bytes(config.output_dir / "runs"))
        assert outputs[0] == outputs[1]

    def test_invalid_config_runs_nothing(self, experiment_raw):
        experiment_raw["environment"]["sizes"] = [3]
        config = build_config(experiment_raw)
        with pytest.raises(ConfigError):
            run_sweep(config)
        assert not (config.output_dir / "runs").exists()

    def test_load_results_round_trip(self, experiment_raw):
        config = build_config(experiment_raw)
        runner = SweepRunner(config)
        runner.execute()
        runner.write_outputs()
        frame = load_results(config.output_dir)
        assert len(frame) == 24
        assert frame["beta"].dtype == np.float64
        assert (frame["num_explorers"] == 2).all()
        expected = pd.DataFrame(runner.results[0].rows)
        got = frame[frame["run_id"] == runner.results[0].spec.run_id].reset_index(drop=True)[RUN_COLUMNS]
        pd.testing.assert_frame_equal(got, expected[RUN_COLUMNS], check_dtype=False)

    def test_load_results_without_runs(self, tmp_path):
        with pytest.raises(ConfigError):
            load_results(tmp_path)


class TestScoreTable:

    def summary(self):
        rows = []
        for n, solve in ((6, 10), (8, None), (10, 2000)):
            rows.append({"env": "deep_sea", "N_or_L": n, "variant": "tdu", "beta": 1.0, "lambda": 3.0,
                         "num_explorers": 10, "seed": 0, "solve_episode": solve, "retained_episode": None})
        for depth, retained in ((3, 40), (5, None)):
            rows.append({"env": "binary_tree", "N_or_L": depth, "variant": "tdu", "beta": 1.0, "lambda": 3.0,
                         "num_explorers": 10, "seed": 0, "solve_episode": 1, "retained_episode": retained})
        frame = pd.DataFrame(rows)
        return frame.astype({"solve_episode": "Int64", "retained_episode": "Int64"})

    def test_scores(self):
        table = score_table(self.summary()).set_index("env")
        assert table.loc["deep_sea", "score"] == pytest.approx(100.0 / 3)
        assert table.loc["deep_sea", "sizes"] == "6 8 10"
        assert table.loc["binary_tree", "score"] == pytest.approx(50.0)


class TestBiasSuite:

    def test_writes_tables_and_passes(self, tmp_path):
        config = build_config({"experiment": {"output_dir": str(tmp_path)}, "bias": {"num_random_instances": 10}})
        assert run_bias_suite(config) == 0
        summary = read_csv(tmp_path / "bias" / "summary.csv")
        assert summary["passed"].all()
        assert len(summary) == 7
        assert (tmp_path / "bias" / "consistency_state_action.csv").exists()
        assert (tmp_path / "bias" / "variance_identity_transitions.csv").exists()
        assert (tmp_path / "bias" / "unbiased_td_variance_transitions.csv").exists()
        assert "comparison_mean_agreement" in summary.columns

    def test_invalid_bias_settings(self, tmp_path):
        config = build_config({"experiment": {"output_dir": str(tmp_path)}, "bias": {"discount": 0.0}})
        with pytest.raises(ConfigError):
            run_bias_suite(config)
