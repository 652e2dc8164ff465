"""
Main Pipeline Orchestration
TDU Exploration Lab - runs, sweeps, bias suite, plots and scores
"""
import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from loguru import logger

sys.path.append(str(Path(__file__).parent))

from config.config import LOG_CONFIG, LOGS_DIR
from tdu.agents import save_checkpoint
from tdu.exceptions import ConfigError
from tdu.experiment import (
    SweepRunner,
    load_results,
    load_summary,
    run_bias_suite,
    run_single,
    score_table,
    write_curves,
)
from tdu.settings import load_config

# Configure main logger
logger.remove()
logger.add(
    sys.stdout,
    level=LOG_CONFIG["level"],
    format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <level>{message}</level>"
)
logger.add(
    LOGS_DIR / "main.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2


class ExperimentPipeline:
    """
    Command dispatcher; each `run_<command>` returns an exit code
    """

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = None

    def load(self) -> None:
        args = self.args
        flags = {
            "beta": args.beta,
            "prior_scale": args.prior_scale,
            "variant": args.variant,
            "size": args.size,
            "seed": args.seed,
            "episodes": args.episodes,
            "workers": args.workers,
            "output_dir": args.output_dir,
            "stochastic": True if args.stochastic else None,
        }
        self.config = load_config(args.config, flags=flags, set_items=args.set)

    def run_run(self) -> int:
        """Single run; the grid must expand to exactly one spec"""
        runner = SweepRunner(self.config)
        runner.validate()
        specs = self.config.run_specs()
        if len(specs) != 1:
            raise ConfigError(f"'run' expects exactly one run, the config expands to {len(specs):,}; use 'sweep'")
        logger.info("=" * 80)
        logger.info(f"RUN {specs[0].run_id}")
        logger.info("=" * 80)
        result = run_single(specs[0], show_progress=self.config.experiment.show_progress,
                            keep_agent=self.args.checkpoint is not None)
        runner.results = [result]
        runner.write_outputs()
        if self.args.checkpoint is not None:
            save_checkpoint(result.agent, Path(self.args.checkpoint))
            logger.info(f"✓ Checkpoint saved to {self.args.checkpoint}")
        logger.info(
            f"Episodes: {len(result.rows):,} | solve episode: {result.solve_episode} | "
            f"retained: {result.retained_episode} | final average regret: {result.final_avg_regret:.4f}"
        )
        return EXIT_OK

    def run_sweep(self) -> int:
        return SweepRunner(self.config).run()

    def run_bias(self) -> int:
        return run_bias_suite(self.config)

    def run_plot(self) -> int:
        """Re-render SVG curves from an existing results directory"""
        frame = load_results(self.config.output_dir)
        paths = write_curves(frame, self.config.output_dir, self.config.experiment.solve_threshold)
        for path in paths:
            logger.info(f"✓ {path}")
        return EXIT_OK

    def run_score(self) -> int:
        """Print the score table of an existing results directory"""
        summary = load_summary(self.config.output_dir)
        ok = summary[summary["status"] == "ok"]
        table = score_table(ok)
        logger.info("=" * 80)
        logger.info("SCORE")
        logger.info("=" * 80)
        for _, row in table.iterrows():
            logger.info(
                f"{row['env']:<12} {row['variant']:<10} beta={row['beta']:<8g} lambda={row['lambda']:<6g} "
                f"explorers={int(row['num_explorers']):<4} seed={int(row['seed']):<6} sizes=[{row['sizes']}] "
                f"score={row['score']:.1f}%"
            )
        if len(table):
            logger.info(f"Mean score: {table['score'].mean():.1f}%")
        censored = int(summary["censored"].sum())
        if censored:
            logger.warning(f"⚠ {censored:,} run(s) censored by the episode budget")
        return EXIT_OK

    def dispatch(self) -> int:
        start_time = datetime.now()
        command = self.args.command
        try:
            self.load()
            code = getattr(self, f"run_{command}")()
        except ConfigError as e:
            logger.error(f"✗ Configuration error: {e}")
            return EXIT_CONFIG_ERROR
        except Exception as e:
            logger.exception(f"✗ {command} failed: {e}")
            return EXIT_RUN_FAILURE
        logger.info(f"Duration: {datetime.now() - start_time}")
        return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="TDU Exploration Lab - exploration experiments and bias verification"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML experiment file (default: built-in defaults)")
    common.add_argument("--beta", type=float, default=None, help="Intrinsic reward scale (agent.beta)")
    common.add_argument("--prior-scale", type=float, default=None, help="Randomized prior scale lambda")
    common.add_argument("--variant", default=None,
                        choices=["tdu", "bdqn", "qu", "q_ucb", "qex", "cts", "tdu_bandit"], help="Agent variant")
    common.add_argument("--size", type=int, default=None, help="Deep Sea size N or tree depth L")
    common.add_argument("--seed", type=int, default=None, help="Seed (replaces sweep.seeds)")
    common.add_argument("--episodes", type=int, default=None, help="Episode budget per run")
    common.add_argument("--workers", type=int, default=None, help="Worker processes for sweeps")
    common.add_argument("--output-dir", default=None, help="Results directory (default: $TDU_OUTPUT_ROOT or ./results)")
    common.add_argument("--stochastic", action="store_true", help="Stochastic Deep Sea")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Generic override, YAML-parsed value; repeatable")

    run = commands.add_parser("run", parents=[common], help="Single run")
    run.add_argument("--checkpoint", default=None, help="Save the trained agent to this .npz file")
    commands.add_parser("sweep", parents=[common], help="Grid of runs over a worker pool")
    commands.add_parser("bias", parents=[common], help="Bias verifier constructions")
    commands.add_parser("plot", parents=[common], help="SVG curves from an existing results directory")
    commands.add_parser("score", parents=[common], help="Score table from an existing results directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point with command-line arguments

    Returns:
        0 ok, 1 run failure, 2 configuration error
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "run":
        args.checkpoint = None
    code = ExperimentPipeline(args).dispatch()
    if code == EXIT_OK:
        logger.info(f"✓ {args.command} completed successfully")
    else:
        logger.error(f"✗ {args.command} finished with exit code {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
