"""
Tests for regret accounting, scoring and result files
"""
import numpy as np
import pandas as pd
import pytest

from tdu.exceptions import InvalidArgumentError
from tdu.metrics import (
    RUN_COLUMNS,
    EpisodeLog,
    RunMetrics,
    aggregate_runs,
    curves_from_frame,
    deep_sea_score,
    emit_csv,
    emit_svg_curves,
    read_csv,
    run_frame,
    solved_within_budget,
    update_regret,
)


def feed(metrics: RunMetrics, returns) -> RunMetrics:
    for r in returns:
        metrics.update(r)
    return metrics


def episode_rows(seed: int, returns, beta: float = 1.0):
    rows, total = [], 0.0
    for i, r in enumerate(returns, start=1):
        total += 0.99 - r
        rows.append({
            "run_id": f"deep_sea-4-s{seed}", "seed": seed, "env": "deep_sea", "N_or_L": 4,
            "episode": i, "return": r, "regret": 0.99 - r, "avg_regret": total / i,
            "head": i % 2, "beta": beta, "lambda": 3.0, "variant": "tdu", "episode_length": 4,
        })
    return rows


class TestRunMetrics:

    def test_cumulative_average_and_solve(self):
        metrics = feed(RunMetrics(optimal_return=1.0), [0.0, 0.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(metrics.avg_regrets, [1.0, 1.0, 2 / 3, 0.5, 0.4])
        assert metrics.solve_episode == 3
        assert metrics.episodes == 5
        assert metrics.average_regret == pytest.approx(0.4)

    def test_solve_episode_is_first_crossing(self):
        metrics = feed(RunMetrics(optimal_return=1.0), [1.0, 0.0, 0.0, 0.0])
        assert metrics.solve_episode == 1
        assert metrics.avg_regrets[-1] > 0.9

    def test_sliding_window(self):
        metrics = feed(RunMetrics(optimal_return=1.0, window=2), [0.0, 0.0, 0.0, 1.0, 0.0])
        np.testing.assert_allclose(metrics.avg_regrets, [1.0, 1.0, 1.0, 0.5, 0.5])
        assert metrics.solve_episode == 4

    def test_retained_needs_consecutive_successes(self):
        metrics = feed(RunMetrics(optimal_return=1.0, retain_window=3), [1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
        assert metrics.retained_episode == 4

    def test_never_solved(self):
        metrics = feed(RunMetrics(optimal_return=1.0), [0.0] * 10)
        assert metrics.solve_episode is None
        assert metrics.retained_episode is None

    def test_empty_average_is_nan(self):
        assert np.isnan(RunMetrics(optimal_return=1.0).average_regret)

    def test_invalid_window(self):
        with pytest.raises(InvalidArgumentError):
            RunMetrics(optimal_return=1.0, window=0)

    def test_update_regret_checks_optimum(self):
        metrics = RunMetrics(optimal_return=0.99)
        update_regret(metrics, 0.5, 0.99)
        assert metrics.regrets == [pytest.approx(0.49)]
        with pytest.raises(InvalidArgumentError):
            update_regret(metrics, 0.5, 1.0)

    def test_episode_return_must_be_finite(self):
        with pytest.raises(InvalidArgumentError):
            EpisodeLog(episode=1, episode_return=float("nan"), head=0, length=4)


class TestDeepSeaScore:

    def test_budget_is_strict(self):
        assert solved_within_budget(15, 4)
        assert not solved_within_budget(16, 4)
        assert not solved_within_budget(None, 4)

    def test_score(self):
        assert deep_sea_score({6: 10, 8: None, 10: 2000}) == pytest.approx(100.0 / 3)
        assert deep_sea_score({4: 1, 5: 1}) == 100.0

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            deep_sea_score({})


class TestResultFiles:

    def test_run_frame_column_order(self):
        frame = run_frame(episode_rows(0, [0.0, 0.99]))
        assert list(frame.columns) == RUN_COLUMNS
        assert frame["episode"].dtype == np.int64

    def test_csv_round_trip_is_exact(self, tmp_path):
        frame = run_frame(episode_rows(3, [0.0, 0.99, -0.0025, 0.1 + 0.2]))
        path = emit_csv(frame, tmp_path / "runs" / "run.csv")
        pd.testing.assert_frame_equal(read_csv(path), frame)

    def test_csv_bytes_deterministic(self, tmp_path):
        frame = run_frame(episode_rows(1, [0.0, 0.5, 0.99]))
        a = emit_csv(frame, tmp_path / "a.csv").read_bytes()
        b = emit_csv(frame, tmp_path / "b.csv").read_bytes()
        assert a == b
        assert b"\r\n" not in a

    def test_aggregate_across_seeds(self):
        frame = run_frame(episode_rows(0, [0.0, 0.99]) + episode_rows(1, [0.99, 0.99]))
        frame["num_explorers"] = 2
        agg = aggregate_runs(frame)
        assert len(agg) == 2
        first = agg[agg["episode"] == 1].iloc[0]
        assert first["seeds"] == 2
        assert first["return_mean"] == pytest.approx(0.495)
        assert first["return_std"] == pytest.approx(np.std([0.0, 0.99], ddof=1))

    def test_curves_from_frame(self):
        frame = run_frame(
            episode_rows(0, [0.0, 0.5, 0.99]) + episode_rows(1, [0.99] * 3) + episode_rows(0, [0.1] * 3, beta=0.0)
        )
        curves = curves_from_frame(frame)
        assert sorted(curves) == ["variant=tdu beta=0.0 lambda=3.0", "variant=tdu beta=1.0 lambda=3.0"]
        assert curves["variant=tdu beta=1.0 lambda=3.0"].shape == (2, 3)
        assert curves["variant=tdu beta=0.0 lambda=3.0"].shape == (1, 3)


class TestSvgCurves:

    def series(self):
        return {"tdu": np.array([[1.0, 0.5, 0.2], [1.0, 0.7, 0.3]]), "bdqn": np.array([1.0, 0.9, 0.9])}

    def test_identical_input_identical_bytes(self, tmp_path):
        a = emit_svg_curves(self.series(), tmp_path / "a.svg", title="deep_sea N=4", threshold=0.9)
        b = emit_svg_curves(self.series(), tmp_path / "b.svg", title="deep_sea N=4", threshold=0.9)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes().lstrip().startswith(b"<?xml")

    def test_empty_series(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            emit_svg_curves({}, tmp_path / "empty.svg")
        with pytest.raises(InvalidArgumentError):
            emit_svg_curves({"tdu": np.array([])}, tmp_path / "empty.svg")
