"""
Experiment Module - Seeded runs, sweeps over a worker pool, and the bias suite

Output layout of a sweep (all under `experiment.output_dir`):

    config.yaml               resolved configuration
    runs/<run_id>.csv         per-episode log of one run (RUN_COLUMNS)
    aggregate.csv             mean/std across seeds per group and episode
    summary.csv               one row per run: solve episode, retained solve, censoring
    score.csv                 per (env, variant, beta, lambda, explorers, seed) score
    curves/<env>_<size>.svg   average-regret curves per size
"""
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from loguru import logger
from tqdm import tqdm

sys.path.append(str(Path(__file__).parent.parent))

from config.config import LOG_CONFIG, LOGS_DIR
from tdu.agents import EnsembleAgent
from tdu.bias_suite import run_constructions
from tdu.envs import make_env, optimal_return
from tdu.exceptions import ConfigError, ContractViolationError
from tdu.metrics import (
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
)
from tdu.nn import RngStream
from tdu.settings import ExperimentConfig, RunSpec
from tdu.validate import ConfigValidator, moment_schema, run_log_schema, validate_frame

logger.add(
    LOGS_DIR / "experiment.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

SUMMARY_COLUMNS = [
    "run_id", "env", "N_or_L", "variant", "beta", "lambda", "num_explorers", "seed",
    "episodes", "optimal_return", "final_avg_regret", "solve_episode", "retained_episode",
    "solved_within_budget", "censored", "status",
]

SCORE_KEYS = ["env", "variant", "beta", "lambda", "num_explorers", "seed"]


@dataclass
class RunResult:
    """Outcome of one run; `error` is set when the run raised"""

    spec: RunSpec
    rows: List[Dict] = field(default_factory=list)
    optimal_return: float = float("nan")
    solve_episode: Optional[int] = None
    retained_episode: Optional[int] = None
    final_avg_regret: float = float("nan")
    sgd_steps: int = 0
    error: Optional[str] = None
    agent: Optional[EnsembleAgent] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def solved(self) -> bool:
        if self.spec.env["name"] == "deep_sea":
            return solved_within_budget(self.solve_episode, self.spec.size)
        return self.retained_episode is not None

    @property
    def censored(self) -> bool:
        """Budget cut below 2^N and the run had not solved by then"""
        return self.spec.budget_below_horizon and self.solve_episode is None

    def summary_row(self) -> Dict:
        spec = self.spec
        return {
            "run_id": spec.run_id,
            "env": spec.env["name"],
            "N_or_L": spec.size,
            "variant": spec.agent.variant,
            "beta": float(spec.agent.beta),
            "lambda": float(spec.agent.prior_scale),
            "num_explorers": spec.agent.num_explorers,
            "seed": spec.seed,
            "episodes": len(self.rows),
            "optimal_return": self.optimal_return,
            "final_avg_regret": self.final_avg_regret,
            "solve_episode": self.solve_episode,
            "retained_episode": self.retained_episode,
            "solved_within_budget": self.solved,
            "censored": self.censored,
            "status": "ok" if self.ok else "failed",
        }


def run_streams(seed: int, env_name: str, size: int) -> Dict[str, RngStream]:
    """Per-run named streams: the environment stream depends on (name, size), the agent's on the seed only"""
    root = RngStream(seed)
    return {
        "env": root.split("env").split(f"{env_name}-{size}"),
        "agent": root.split("agent"),
    }


def run_single(spec: RunSpec, show_progress: bool = False, keep_agent: bool = False) -> RunResult:
    """
    Execute one deterministic run

    Args:
        spec: Run description; identical specs give identical results
        show_progress: Show a tqdm bar over episodes
        keep_agent: Attach the trained agent to the result

    Returns:
        RunResult with one row per episode
    """
    streams = run_streams(spec.seed, spec.env["name"], spec.size)
    env = make_env(spec.env, streams["env"])
    agent = EnsembleAgent(spec.agent, env.observation_size, env.num_actions, streams["agent"])
    best = optimal_return(env)
    metrics = RunMetrics(best, spec.solve_threshold, spec.regret_window, spec.retain_window)
    result = RunResult(spec=spec, optimal_return=best)

    for episode in tqdm(range(1, spec.episodes + 1), desc=spec.run_id, disable=not show_progress, leave=False):
        obs = env.reset()
        head = agent.begin_episode()
        total, length, done = 0.0, 0, False
        while not done:
            action = agent.act(obs)
            step = env.step(action)
            agent.observe(obs, action, step)
            total += step.reward
            length += 1
            obs = step.observation
            done = step.episode_done
        log = EpisodeLog(episode=episode, episode_return=total, head=head, length=length)
        metrics.update(log.episode_return)
        result.rows.append({
            "run_id": spec.run_id,
            "seed": spec.seed,
            "env": spec.env["name"],
            "N_or_L": spec.size,
            "episode": log.episode,
            "return": log.episode_return,
            "regret": metrics.regrets[-1],
            "avg_regret": metrics.average_regret,
            "head": log.head,
            "beta": float(spec.agent.beta),
            "lambda": float(spec.agent.prior_scale),
            "variant": spec.agent.variant,
            "episode_length": log.length,
        })
        if spec.stop_on_retain and metrics.retained_episode is not None:
            break

    result.solve_episode = metrics.solve_episode
    result.retained_episode = metrics.retained_episode
    result.final_avg_regret = metrics.average_regret
    result.sgd_steps = agent.sgd_steps
    if keep_agent:
        result.agent = agent
    return result


def _run_worker(spec: RunSpec, show_progress: bool = False) -> RunResult:
    """Pool entry point; failures come back as results instead of exceptions"""
    try:
        return run_single(spec, show_progress=show_progress)
    except Exception as e:
        logger.exception(f"Run {spec.run_id} failed")
        return RunResult(spec=spec, error=f"{type(e).__name__}: {e}")


def score_table(summary: pd.DataFrame) -> pd.DataFrame:
    """
    Score per (env, variant, beta, lambda, explorers, seed)

    Deep Sea scores the percentage of sizes solved in fewer than 2^N
    episodes; Binary Tree the percentage of depths with a retained solve.
    """
    rows = []
    for key, group in summary.groupby(SCORE_KEYS, sort=True):
        env = key[0]
        if env == "deep_sea":
            episodes = {
                int(n): (None if pd.isna(ep) else int(ep))
                for n, ep in zip(group["N_or_L"], group["solve_episode"])
            }
            score = deep_sea_score(episodes)
        else:
            score = 100.0 * float(group["retained_episode"].notna().mean())
        rows.append({
            **dict(zip(SCORE_KEYS, key)),
            "sizes": " ".join(str(int(n)) for n in sorted(group["N_or_L"])),
            "score": score,
        })
    return pd.DataFrame(rows, columns=SCORE_KEYS + ["sizes", "score"])


def write_curves(frame: pd.DataFrame, output_dir: Path, solve_threshold: Optional[float] = None) -> List[Path]:
    """One SVG of average-regret curves per (env, size)"""
    paths = []
    labels = [c for c in ("variant", "beta", "lambda", "num_explorers") if c in frame.columns]
    for (env, size), group in frame.groupby(["env", "N_or_L"], sort=True):
        curves = curves_from_frame(group, value="avg_regret", label_columns=labels)
        path = output_dir / "curves" / f"{env}_{int(size)}.svg"
        emit_svg_curves(curves, path, title=f"{env} N={int(size)}", threshold=solve_threshold)
        paths.append(path)
    return paths


class SweepRunner:
    """
    Runs every spec of an experiment grid and writes the result tables

    Args:
        config: Validated experiment configuration
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.output_dir = config.output_dir
        self.results: List[RunResult] = []
        logger.info(f"Initialized SweepRunner (output: {self.output_dir})")

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If the configuration fails validation
        """
        validator = ConfigValidator()
        validator.generate_validation_report(self.config, scope="sweep")
        if validator.validation_results["summary"]["status"] != "PASS":
            validator.print_summary()
        validator.raise_for_status()

    def execute(self, specs: Optional[Sequence[RunSpec]] = None) -> List[RunResult]:
        """
        Run specs in grid order; worker count only affects wall-clock

        Returns:
            Results in the same order as `specs`
        """
        specs = list(specs if specs is not None else self.config.run_specs())
        workers = min(self.config.experiment.num_workers, max(len(specs), 1))
        show = self.config.experiment.show_progress
        logger.info(f"Executing {len(specs):,} runs on {workers} worker(s)")
        if workers <= 1:
            self.results = [_run_worker(spec, show_progress=show and len(specs) == 1) for spec in
                            tqdm(specs, desc="runs", disable=not show or len(specs) == 1)]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                self.results = list(tqdm(pool.map(_run_worker, specs), total=len(specs), desc="runs", disable=not show))
        for result in self.results:
            if result.ok:
                status = "solved" if result.solved else "censored" if result.censored else "not solved"
                logger.info(f"✓ {result.spec.run_id}: {len(result.rows):,} episodes, {status}")
            else:
                logger.error(f"✗ {result.spec.run_id}: {result.error}")
        return self.results

    def write_outputs(self) -> Dict[str, Path]:
        """
        Write per-run, aggregate, summary and score tables plus SVG curves

        Raises:
            ContractViolationError: If a run log breaks its schema
        """
        out = self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        written: Dict[str, Path] = {}
        resolved = json.loads(json.dumps(self.config.to_dict()))
        (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True))
        written["config"] = out / "config.yaml"

        schema = run_log_schema()
        frames = []
        for result in self.results:
            if not result.ok or not result.rows:
                continue
            frame = run_frame(result.rows)
            valid, errors = validate_frame(frame, schema)
            if not valid:
                raise ContractViolationError(f"run log of {result.spec.run_id} is invalid: {errors[:5]}")
            emit_csv(frame, out / "runs" / f"{result.spec.run_id}.csv")
            frames.append(frame.assign(num_explorers=result.spec.agent.num_explorers))

        summary = pd.DataFrame([r.summary_row() for r in self.results], columns=SUMMARY_COLUMNS)
        summary = summary.astype({"solve_episode": "Int64", "retained_episode": "Int64"})
        written["summary"] = emit_csv(summary, out / "summary.csv")

        if frames:
            combined = pd.concat(frames, ignore_index=True)
            written["aggregate"] = emit_csv(aggregate_runs(combined), out / "aggregate.csv")
            ok = summary[summary["status"] == "ok"]
            written["score"] = emit_csv(score_table(ok), out / "score.csv")
            write_curves(combined, out, self.config.experiment.solve_threshold)
            written["curves"] = out / "curves"
        logger.info(f"Wrote results for {len(frames):,} runs to {out}")
        return written

    def run(self) -> int:
        """
        Validate, execute and write

        Returns:
            0 when every run succeeded, 1 otherwise

        Raises:
            ConfigError: If validation fails (nothing is run)
        """
        logger.info("=" * 80)
        logger.info("SWEEP")
        logger.info("=" * 80)
        self.validate()
        self.execute()
        self.write_outputs()
        failed = sum(not r.ok for r in self.results)
        solved = sum(r.ok and r.solved for r in self.results)
        logger.info(f"Runs: {len(self.results):,} | solved: {solved:,} | failed: {failed:,}")
        return 1 if failed else 0


def run_sweep(config: ExperimentConfig) -> int:
    """Run the configured grid; returns the exit status"""
    return SweepRunner(config).run()


def run_bias_suite(config: ExperimentConfig) -> int:
    """
    Run the constructed-instance battery and write its tables

    Writes `bias/<construction>_state_action.csv`,
    `bias/<construction>_transitions.csv` and `bias/summary.csv`.

    Returns:
        0 when every construction passed, 1 otherwise

    Raises:
        ConfigError: If the bias settings fail validation
    """
    logger.info("=" * 80)
    logger.info("BIAS SUITE")
    logger.info("=" * 80)
    validator = ConfigValidator()
    validator.generate_validation_report(config, scope="bias")
    validator.raise_for_status()

    out = config.output_dir / "bias"
    results = run_constructions(config.bias)
    rows = []
    for result in results:
        if result.report is not None:
            for table in (result.report.per_state_action, result.report.per_transition):
                valid, errors = validate_frame(table, moment_schema(list(table.columns)))
                if not valid:
                    raise ContractViolationError(f"moment report of {result.name} is invalid: {errors[:5]}")
            result.report.to_csv(out, result.name)
        row = {
            "construction": result.name,
            "passed": result.passed,
            "metric": result.metric,
            "threshold": result.threshold,
            "message": result.message,
        }
        if result.comparison is not None:
            row.update({f"comparison_{k}": v for k, v in result.comparison.summary.items()})
        rows.append(row)
    emit_csv(pd.DataFrame(rows), out / "summary.csv")
    passed = sum(r.passed for r in results)
    logger.info(f"Constructions passed: {passed}/{len(results)}")
    return 0 if passed == len(results) else 1


def load_results(output_dir: Path) -> pd.DataFrame:
    """
    Concatenate every per-run CSV of a results directory

    Raises:
        ConfigError: If the directory holds no run logs
    """
    paths = sorted((Path(output_dir) / "runs").glob("*.csv"))
    if not paths:
        raise ConfigError(f"No run logs found under {Path(output_dir) / 'runs'}")
    frames = [read_csv(p) for p in paths]
    frame = pd.concat(frames, ignore_index=True)
    summary_path = Path(output_dir) / "summary.csv"
    if summary_path.exists():
        explorers = read_csv(summary_path).set_index("run_id")["num_explorers"]
        frame["num_explorers"] = frame["run_id"].map(explorers).astype(np.int64)
    return frame


def load_summary(output_dir: Path) -> pd.DataFrame:
    """
    Raises:
        ConfigError: If there is no summary.csv
    """
    path = Path(output_dir) / "summary.csv"
    if not path.exists():
        raise ConfigError(f"No summary found at {path}")
    return read_csv(path)
