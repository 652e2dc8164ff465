"""
Validate Module - Experiment configuration rules and output table schemas
"""
import json
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import pandera as pa
from loguru import logger
from pandera import Check, Column, DataFrameSchema

sys.path.append(str(Path(__file__).parent.parent))

from config.config import ENV_DEFAULTS, LOG_CONFIG, LOGS_DIR, VALIDATION_CONFIG
from tdu.exceptions import ConfigError, InvalidArgumentError
from tdu.heads import SIGMA_VARIANTS, VARIANTS
from tdu.settings import ExperimentConfig

logger.add(
    LOGS_DIR / "validate.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

ENVIRONMENTS = ("deep_sea", "binary_tree")


class ConfigValidator:
    """
    Rule-based validation of an experiment configuration before any run starts
    """

    def __init__(self):
        """Initialize the ConfigValidator"""
        self.validation_results = {
            "rules_passed": [],
            "rules_failed": [],
            "warnings": [],
            "summary": {},
        }
        logger.info("Initialized ConfigValidator")

    def _record(self, ok: bool, passed: str, failed: str) -> bool:
        if ok:
            self.validation_results["rules_passed"].append(passed)
        else:
            self.validation_results["rules_failed"].append(failed)
            logger.error(failed)
        return ok

    def validate_environment(self, config: ExperimentConfig) -> None:
        env = config.environment
        self._record(
            env.name in ENVIRONMENTS,
            f"Environment: {env.name}",
            f"Unknown environment '{env.name}', expected one of {ENVIRONMENTS}",
        )
        sizes = list(env.sizes)
        self._record(len(sizes) > 0, f"Sizes: {sizes}", "environment.sizes is empty")
        if env.name == "deep_sea":
            low, high = ENV_DEFAULTS["deep_sea_min_size"], VALIDATION_CONFIG["max_deep_sea_size"]
        else:
            low, high = 1, VALIDATION_CONFIG["max_tree_depth"]
        bad = [n for n in sizes if not isinstance(n, (int, np.integer)) or not low <= n <= high]
        self._record(not bad, f"Size range check: all within [{low}, {high}]",
                     f"Invalid {env.name} sizes {bad}: must be integers in [{low}, {high}]")
        if env.name == "binary_tree" and env.stochastic:
            self.validation_results["warnings"].append("environment.stochastic is ignored for binary_tree")
        self._record(env.unscaled_move_cost >= 0, "Move cost non-negative",
                     f"environment.unscaled_move_cost must be >= 0, got {env.unscaled_move_cost}")

    def validate_sweep(self, config: ExperimentConfig) -> None:
        sweep = config.sweep
        seeds = list(sweep.seeds)
        self._record(
            len(seeds) > 0 and all(isinstance(s, (int, np.integer)) and 0 <= s < 2**64 for s in seeds),
            f"Seeds: {len(seeds)} valid",
            f"sweep.seeds must be non-negative 64-bit integers, got {seeds}",
        )
        self._record(len(set(seeds)) == len(seeds), "Seed uniqueness: no duplicates",
                     f"sweep.seeds contains duplicates: {seeds}")
        variants = list(sweep.variants or [config.agent.variant])
        unknown = [v for v in variants if v not in VARIANTS]
        self._record(not unknown, f"Variants: {variants}", f"Unknown variants {unknown}, expected {VARIANTS}")
        betas = list(sweep.betas or [config.agent.beta])
        self._record(all(b >= 0 for b in betas), "Betas non-negative", f"Negative beta in {betas}")
        scales = list(sweep.prior_scales or [config.agent.prior_scale])
        self._record(all(s >= 0 for s in scales), "Prior scales non-negative", f"Negative prior scale in {scales}")
        if sweep.num_explorers is not None:
            total = config.agent.ensemble_size
            min_k = 2 if any(v in SIGMA_VARIANTS for v in variants) else 1
            bad = [n for n in sweep.num_explorers if n < 0 or total - n < min_k]
            self._record(not bad, f"Explorer counts within ensemble of {total}",
                         f"num_explorers {bad} leave fewer than {min_k} exploiters in an ensemble of {total}")
        self._record(
            config.agent.ensemble_size <= VALIDATION_CONFIG["max_ensemble_size"],
            f"Ensemble size: {config.agent.ensemble_size}",
            f"Ensemble size {config.agent.ensemble_size} exceeds {VALIDATION_CONFIG['max_ensemble_size']}",
        )
        if not rules_ok(self):
            return
        try:
            specs = config.run_specs()
            self._record(True, f"Run grid: {len(specs):,} runs", "")
        except InvalidArgumentError as e:
            self._record(False, "", f"Run grid could not be expanded: {e}")

    def validate_experiment(self, config: ExperimentConfig) -> None:
        exp = config.experiment
        if exp.episodes is not None:
            self._record(exp.episodes >= 1, f"Episode budget: {exp.episodes:,}",
                         f"experiment.episodes must be >= 1, got {exp.episodes}")
        self._record(exp.budget_ceiling >= 1, f"Budget ceiling: {exp.budget_ceiling:,}",
                     f"experiment.budget_ceiling must be >= 1, got {exp.budget_ceiling}")
        self._record(1 <= exp.num_workers <= VALIDATION_CONFIG["max_workers"], f"Workers: {exp.num_workers}",
                     f"experiment.num_workers must lie in [1, {VALIDATION_CONFIG['max_workers']}], got {exp.num_workers}")
        self._record(exp.solve_threshold > 0, "Solve threshold positive",
                     f"experiment.solve_threshold must be > 0, got {exp.solve_threshold}")
        self._record(exp.retain_window >= 1, "Retain window positive",
                     f"experiment.retain_window must be >= 1, got {exp.retain_window}")
        if exp.regret_window is not None:
            self._record(exp.regret_window >= 1, f"Regret window: {exp.regret_window}",
                         f"experiment.regret_window must be >= 1, got {exp.regret_window}")
        if config.environment.name == "deep_sea" and exp.episodes is None:
            censored = [n for n in config.environment.sizes if 2 ** n > exp.budget_ceiling]
            if censored:
                self.validation_results["warnings"].append(
                    f"Budget ceiling {exp.budget_ceiling:,} is below 2^N for sizes {censored}; unsolved runs are censored"
                )

    def validate_bias(self, config: ExperimentConfig) -> None:
        bias = config.bias
        probs = np.asarray(bias["consistency_probs"], dtype=np.float64)
        tol = VALIDATION_CONFIG["probability_tolerance"]
        self._record(
            probs.size > 0 and np.all(probs >= 0) and abs(probs.sum() - 1.0) <= tol,
            "Belief probabilities sum to 1",
            f"bias.consistency_probs must be non-negative and sum to 1, got sum {probs.sum()!r}",
        )
        self._record(0.0 < bias["discount"] < 1.0, f"Bias discount: {bias['discount']}",
                     f"bias.discount must lie in (0, 1), got {bias['discount']}")
        self._record(bias["num_random_instances"] >= 1, f"Random instances: {bias['num_random_instances']}",
                     f"bias.num_random_instances must be >= 1, got {bias['num_random_instances']}")

    def generate_validation_report(self, config: ExperimentConfig, scope: str = "sweep",
                                   report_dir: Optional[Path] = None) -> Dict:
        """
        Run the rules for `scope` ("sweep" or "bias") and save a JSON report

        Returns:
            The validation results with a PASS/WARNING/FAIL summary
        """
        logger.info("Generating validation report...")
        if scope == "bias":
            self.validate_bias(config)
        else:
            self.validate_environment(config)
            self.validate_sweep(config)
            self.validate_experiment(config)

        failed = len(self.validation_results["rules_failed"])
        warnings = len(self.validation_results["warnings"])
        self.validation_results["summary"] = {
            "scope": scope,
            "timestamp": datetime.now().isoformat(),
            "rules_passed": len(self.validation_results["rules_passed"]),
            "rules_failed": failed,
            "warnings": warnings,
            "status": "FAIL" if failed else "WARNING" if warnings else "PASS",
        }

        report_dir = Path(report_dir or LOGS_DIR)
        report_dir.mkdir(parents=True, exist_ok=True)
        report_path = report_dir / f"validation_report_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')}.json"
        with open(report_path, "w") as f:
            json.dump(self.validation_results, f, indent=2)
        logger.info(f"Validation report saved to: {report_path}")
        logger.info(f"Validation status: {self.validation_results['summary']['status']}")
        return self.validation_results

    def raise_for_status(self) -> None:
        """
        Raises:
            ConfigError: If any rule failed
        """
        if self.validation_results["rules_failed"]:
            raise ConfigError("Configuration failed validation", self.validation_results["rules_failed"])

    def print_summary(self):
        """Print a human-readable summary of validation results"""
        print("\n" + "=" * 80)
        print("CONFIGURATION VALIDATION SUMMARY")
        print("=" * 80)

        summary = self.validation_results.get("summary", {})
        print(f"Status: {summary.get('status', 'N/A')}")
        print(f"Scope: {summary.get('scope', 'N/A')}")
        print(f"  Passed: {len(self.validation_results['rules_passed'])}")
        print(f"  Failed: {len(self.validation_results['rules_failed'])}")
        print(f"  Warnings: {len(self.validation_results['warnings'])}")
        for message in self.validation_results["rules_failed"]:
            print(f"  ✗ {message}")
        for message in self.validation_results["warnings"]:
            print(f"  ⚠ {message}")

        print("=" * 80 + "\n")


def rules_ok(validator: ConfigValidator) -> bool:
    return not validator.validation_results["rules_failed"]


def validate_config(config: ExperimentConfig, scope: str = "sweep") -> Dict:
    """Validate and raise ConfigError on failure"""
    validator = ConfigValidator()
    report = validator.generate_validation_report(config, scope=scope)
    validator.raise_for_status()
    return report


def run_log_schema() -> DataFrameSchema:
    """Schema of per-run episode tables"""
    return DataFrameSchema(
        {
            "run_id": Column(str),
            "seed": Column(int, Check.ge(0)),
            "env": Column(str, Check.isin(list(ENVIRONMENTS))),
            "N_or_L": Column(int, Check.ge(1)),
            "episode": Column(int, Check.ge(1)),
            "return": Column(float, Check(lambda s: np.isfinite(s), element_wise=False)),
            "regret": Column(float, Check(lambda s: np.isfinite(s), element_wise=False)),
            "avg_regret": Column(float),
            "head": Column(int, Check.ge(0)),
            "beta": Column(float, Check.ge(0)),
            "lambda": Column(float, Check.ge(0)),
            "variant": Column(str, Check.isin(list(VARIANTS))),
            "episode_length": Column(int, Check.ge(1)),
        },
        strict=True,
        ordered=True,
    )


def moment_schema(columns: List[str]) -> DataFrameSchema:
    """Moment tables: integer indices, finite moments, ratios may be NaN"""
    index_cols = {"state", "action", "next_state", "next_action"}
    ratio_cols = {"rho", "phi", "kappa", "alpha"}
    spec = {}
    for col in columns:
        if col in index_cols:
            spec[col] = Column(int, Check.ge(0))
        elif col in ratio_cols:
            spec[col] = Column(float, nullable=True)
        else:
            spec[col] = Column(float, Check(lambda s: np.isfinite(s), element_wise=False))
    return DataFrameSchema(spec, strict=True, ordered=True)


def validate_frame(df: pd.DataFrame, schema: DataFrameSchema) -> Tuple[bool, List[str]]:
    """
    Validate a table against a schema

    Returns:
        Tuple of (is_valid, list of errors)
    """
    try:
        schema.validate(df, lazy=True)
        return True, []
    except pa.errors.SchemaErrors as e:
        errors = [f"Column: {row['column']}, Check: {row['check']}" for _, row in e.failure_cases.iterrows()]
        logger.warning(f"Schema validation failed with {len(errors)} errors")
        return False, errors


def main():
    """
    Main function for testing the validate module
    """
    from config.config import CONFIGS_DIR
    from tdu.settings import load_config

    logger.info("=" * 80)
    logger.info("Starting Validate Module Test")
    logger.info("=" * 80)

    for path in sorted(CONFIGS_DIR.glob("*.yaml")):
        config = load_config(path)
        validator = ConfigValidator()
        validator.generate_validation_report(config, scope="bias" if path.stem == "bias" else "sweep")
        logger.info(f"{path.name}: {validator.validation_results['summary']['status']}")
        validator.print_summary()

    logger.info("=" * 80)
    logger.info("Validate Module Test Complete")
    logger.info("=" * 80)


if __name__ == "__main__":
    main()
