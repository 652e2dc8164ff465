"""
End-to-end reproduction checks on Deep Sea and Binary Tree

These sweeps take minutes to hours; run them with `pytest -m slow`.
"""
from collections import defaultdict

import numpy as np
import pytest

from config.config import CONFIGS_DIR
from tdu.experiment import SweepRunner, run_single
from tdu.settings import build_config, load_config

pytestmark = pytest.mark.slow


def sweep(name: str, tmp_path, *overrides):
    config = load_config(
        CONFIGS_DIR / f"{name}.yaml",
        set_items=[f"experiment.output_dir={tmp_path / name}", "experiment.show_progress=false", *overrides],
    )
    runner = SweepRunner(config)
    runner.validate()
    results = runner.execute()
    assert all(r.ok for r in results), [r.error for r in results if not r.ok]
    return results


def solve_counts(results, key):
    counts = defaultdict(int)
    for r in results:
        counts[key(r)] += int(r.solved)
    return counts


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_deep_sea_six_within_500_episodes(seed):
    config = build_config({
        "environment": {"sizes": [6]},
        "agent": {"beta": 1.0, "prior_scale": 3.0},
        "sweep": {"seeds": [seed]},
        "experiment": {"episodes": 500, "show_progress": False},
    })
    result = run_single(config.run_specs()[0])
    assert result.final_avg_regret < 0.9


def test_deterministic_deep_sea(tmp_path):
    results = sweep("deep_sea_deterministic", tmp_path)
    solved = solve_counts(results, lambda r: r.spec.size)
    assert all(solved[n] >= 4 for n in (6, 8, 10, 12, 14)), dict(solved)


def test_deterministic_deep_sea_weak_prior(tmp_path):
    results = sweep("deep_sea_prior_one", tmp_path)
    solved = solve_counts(results, lambda r: r.spec.size)
    assert all(solved[n] >= 4 for n in (6, 8, 10)), dict(solved)


def test_stochastic_deep_sea_ordering(tmp_path):
    results = sweep("deep_sea_stochastic", tmp_path)
    solved = solve_counts(results, lambda r: (r.spec.size, r.spec.agent.beta))
    for n in (6, 8, 10):
        assert solved[(n, 1.0)] >= solved[(n, 0.0)], dict(solved)
    assert any(solved[(n, 1.0)] > solved[(n, 0.0)] for n in (6, 8, 10)), dict(solved)


def test_ablation_ordering(tmp_path):
    results = sweep("ablation", tmp_path)
    budget = {r.spec.size: r.spec.episodes for r in results}
    episodes = defaultdict(list)
    for r in results:
        # unsolved runs count as the full budget
        episodes[(r.spec.size, r.spec.agent.variant)].append(
            r.solve_episode if r.solve_episode is not None else budget[r.spec.size] + 1
        )
    for n in (8, 10, 12):
        tdu = np.median(episodes[(n, "tdu")])
        assert tdu <= np.median(episodes[(n, "qu")]), n
        assert tdu <= np.median(episodes[(n, "q_ucb")]), n


def test_binary_tree(tmp_path):
    results = sweep("binary_tree", tmp_path)
    solved = solve_counts(results, lambda r: (r.spec.size, r.spec.agent.beta))
    retained = defaultdict(list)
    for r in results:
        retained[(r.spec.size, r.spec.agent.beta)].append(
            r.retained_episode if r.retained_episode is not None else r.spec.episodes + 1
        )
    for depth in (10, 30, 50):
        assert solved[(depth, 1.0)] >= 3, dict(solved)
        faster = np.median(retained[(depth, 1.0)]) < np.median(retained[(depth, 0.0)])
        assert solved[(depth, 0.0)] < solved[(depth, 1.0)] or faster, depth
    totals = [sum(solved[(d, beta)] for d in (10, 30, 50)) for beta in (0.0, 0.1, 1.0)]
    assert totals == sorted(totals), totals
