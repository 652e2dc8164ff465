"""
Metrics Module - Regret accounting, Deep Sea score, CSV and SVG output
"""
import csv
import sys
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from loguru import logger

sys.path.append(str(Path(__file__).parent.parent))

from config.config import EXPERIMENT_DEFAULTS, LOG_CONFIG, LOGS_DIR
from tdu.exceptions import InvalidArgumentError

logger.add(
    LOGS_DIR / "metrics.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

# Column order of per-run CSVs
RUN_COLUMNS = [
    "run_id", "seed", "env", "N_or_L", "episode", "return", "regret", "avg_regret",
    "head", "beta", "lambda", "variant", "episode_length",
]

GROUP_COLUMNS = ["env", "N_or_L", "variant", "beta", "lambda", "num_explorers"]

FLOAT_COLUMNS = [
    "return", "regret", "avg_regret", "beta", "lambda",
    "optimal_return", "final_avg_regret", "metric", "threshold",
]

SUCCESS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EpisodeLog:
    """One finished episode"""

    episode: int
    episode_return: float
    head: int
    length: int

    def __post_init__(self):
        if not np.isfinite(self.episode_return):
            raise InvalidArgumentError(f"episode return must be finite, got {self.episode_return}")


@dataclass
class RunMetrics:
    """
    Per-episode regret series of one run

    `solve_episode` is the 1-based episode at which the average regret first
    drops below `solve_threshold`. `retained_episode` is the first episode of
    the first streak of `retain_window` consecutive optimal episodes.

    Args:
        optimal_return: Exact optimal return of the environment
        solve_threshold: Average-regret threshold
        window: None for the average over all episodes, otherwise a sliding window
        retain_window: Streak length for the retained solve
    """

    optimal_return: float
    solve_threshold: float = EXPERIMENT_DEFAULTS["solve_threshold"]
    window: Optional[int] = EXPERIMENT_DEFAULTS["regret_window"]
    retain_window: int = EXPERIMENT_DEFAULTS["retain_window"]
    returns: List[float] = field(default_factory=list)
    regrets: List[float] = field(default_factory=list)
    avg_regrets: List[float] = field(default_factory=list)
    solve_episode: Optional[int] = None
    retained_episode: Optional[int] = None
    _total: float = 0.0
    _recent: deque = field(default_factory=deque)
    _streak: int = 0

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise InvalidArgumentError(f"regret window must be >= 1, got {self.window}")

    @property
    def episodes(self) -> int:
        return len(self.regrets)

    @property
    def average_regret(self) -> float:
        return self.avg_regrets[-1] if self.avg_regrets else float("nan")

    def update(self, episode_return: float) -> "RunMetrics":
        regret = self.optimal_return - float(episode_return)
        self.returns.append(float(episode_return))
        self.regrets.append(regret)
        if self.window is None:
            self._total += regret
            average = self._total / len(self.regrets)
        else:
            self._recent.append(regret)
            if len(self._recent) > self.window:
                self._recent.popleft()
            average = float(np.mean(self._recent))
        self.avg_regrets.append(average)
        if self.solve_episode is None and average < self.solve_threshold:
            self.solve_episode = self.episodes
        if regret <= SUCCESS_TOLERANCE:
            self._streak += 1
            if self.retained_episode is None and self._streak >= self.retain_window:
                self.retained_episode = self.episodes - self.retain_window + 1
        else:
            self._streak = 0
        return self


def update_regret(metrics: RunMetrics, episode_return: float, optimal_return: Optional[float] = None) -> RunMetrics:
    """
    Append one episode's regret and refresh the running average

    Raises:
        InvalidArgumentError: If `optimal_return` disagrees with the metrics
    """
    if optimal_return is not None and optimal_return != metrics.optimal_return:
        raise InvalidArgumentError(
            f"optimal return {optimal_return} does not match the run's {metrics.optimal_return}"
        )
    return metrics.update(episode_return)


def solved_within_budget(solve_episode: Optional[int], size: int) -> bool:
    """Whether average regret fell below threshold in fewer than 2^N episodes"""
    return solve_episode is not None and solve_episode < 2 ** size


def deep_sea_score(solve_episodes: Mapping[int, Optional[int]]) -> float:
    """
    Percentage of sizes N solved in fewer than 2^N episodes

    Args:
        solve_episodes: Size N -> solve episode (None when never solved)
    """
    if not solve_episodes:
        raise InvalidArgumentError("score needs at least one size")
    solved = sum(solved_within_budget(ep, n) for n, ep in solve_episodes.items())
    return 100.0 * solved / len(solve_episodes)


def run_frame(rows: Sequence[Mapping]) -> pd.DataFrame:
    """Per-episode rows in the documented column order"""
    frame = pd.DataFrame(list(rows), columns=RUN_COLUMNS)
    return frame.astype({"seed": "int64", "N_or_L": "int64", "episode": "int64", "head": "int64",
                         "episode_length": "int64"}) if len(frame) else frame


def emit_csv(frame: pd.DataFrame, path: Path) -> Path:
    """
    Write a table with 17 significant digits for floats

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    logger.debug(f"Wrote {len(frame):,} rows to {path}")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    """
    Read a table written by `emit_csv` without losing float precision

    Integral floats are written as "1", so known float columns are cast back.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    present = {c: "float64" for c in FLOAT_COLUMNS if c in frame.columns}
    return frame.astype(present) if present else frame


def aggregate_runs(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and sample std of avg_regret and return across seeds

    Args:
        frame: Concatenated per-run rows carrying GROUP_COLUMNS

    Returns:
        One row per group and episode
    """
    keys = [c for c in GROUP_COLUMNS if c in frame.columns] + ["episode"]
    grouped = frame.groupby(keys, sort=True)
    out = grouped.agg(
        seeds=("seed", "nunique"),
        avg_regret_mean=("avg_regret", "mean"),
        avg_regret_std=("avg_regret", "std"),
        return_mean=("return", "mean"),
        return_std=("return", "std"),
    ).reset_index()
    return out


def build_curve_figure(
    series: Mapping[str, np.ndarray],
    title: str = "",
    xlabel: str = "episode",
    ylabel: str = "average regret",
    threshold: Optional[float] = None,
):
    """
    Line plot of the mean across seeds with a +/- one std band

    Args:
        series: Label -> array of shape (seeds, episodes) or (episodes,)

    Raises:
        InvalidArgumentError: If there is nothing to plot
    """
    if not series or any(np.asarray(v).size == 0 for v in series.values()):
        raise InvalidArgumentError("cannot plot an empty series set")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, values in series.items():
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        x = np.arange(1, values.shape[1] + 1)
        mean = values.mean(axis=0)
        std = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros_like(mean)
        ax.plot(x, mean, label=label, linewidth=1.5)
        if values.shape[0] > 1:
            ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    if threshold is not None:
        ax.axhline(threshold, color="grey", linestyle="--", linewidth=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def emit_svg_curves(series: Mapping[str, np.ndarray], path: Path, **options) -> Path:
    """
    Render curves to a static SVG file; identical input gives identical bytes

    Args:
        series: Label -> (seeds, episodes) array
        path: Output file
        **options: Passed to `build_curve_figure`
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "tdu-lab", "svg.fonttype": "path"}):
        fig = build_curve_figure(series, **options)
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.debug(f"Wrote SVG curves ({len(series)} series) to {path}")
    return path


def curves_from_frame(frame: pd.DataFrame, value: str = "avg_regret", label_columns: Sequence[str] = ("variant", "beta", "lambda")) -> Dict[str, np.ndarray]:
    """Stack per-seed series of `value` into (seeds, episodes) arrays keyed by label"""
    curves: Dict[str, np.ndarray] = {}
    for key, group in frame.groupby(list(label_columns), sort=True):
        key = key if isinstance(key, tuple) else (key,)
        label = " ".join(f"{col}={val}" for col, val in zip(label_columns, key))
        per_seed = [g.sort_values("episode")[value].to_numpy() for _, g in group.groupby("seed", sort=True)]
        length = min(len(s) for s in per_seed)
        curves[label] = np.stack([s[:length] for s in per_seed])
    return curves
