"""
Configuration module for the TDU Exploration Lab
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
LOGS_DIR = PROJECT_ROOT / "logs"
CONFIGS_DIR = PROJECT_ROOT / "configs"
RESULTS_DIR = Path(os.getenv("TDU_OUTPUT_ROOT", str(PROJECT_ROOT / "results")))

# Ensure logs directory exists
LOGS_DIR.mkdir(exist_ok=True)

# Logging configuration
LOG_CONFIG = {
    "level": os.getenv("LOG_LEVEL", "INFO"),
    "format": "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>",
    "rotation": "10 MB",
    "retention": "30 days",
    # file sinks are shared with sweep worker processes
    "enqueue": True,
}

# Agent defaults (bsuite baseline hyper-parameters, explorer split of 10)
AGENT_DEFAULTS = {
    "num_exploiters": 10,
    "num_explorers": 10,
    "beta": 1.0,
    "prior_scale": 3.0,
    "discount": 0.99,
    "mask_prob": 1.0,
    "noise_scale": 0.0,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "sgd_period": 1,
    "target_update_period": 4,
    "min_replay_size": 128,
    "replay_capacity": 10000,
    "hidden_sizes": (64, 64),
    "double_dqn": True,
    "epsilon": 0.0,
    "bandit_eta": 8.0,
    "shared_target_prior": False,
}

# Environment defaults
ENV_DEFAULTS = {
    "deep_sea_min_size": 4,
    "deep_sea_unscaled_move_cost": 0.01,
    "goal_reward": 1.0,
}

# Experiment defaults
EXPERIMENT_DEFAULTS = {
    "budget_ceiling": int(os.getenv("TDU_BUDGET_CEILING", 20000)),
    "num_workers": int(os.getenv("TDU_NUM_WORKERS", 1)),
    "solve_threshold": 0.9,
    "retain_window": 100,
    "regret_window": None,  # None = cumulative average over all episodes
}

# Bias verifier tolerances and battery sizes
BIAS_CONFIG = {
    "consistency_tolerance": 1e-10,
    "identity_tolerance": 1e-10,
    "unbiased_variance_alphas": [0.5, 1.0, 2.0, 4.0],
    "nonzero_residual_threshold": 1e-6,
    "window_margin": 1e-9,
    "num_random_instances": 100,
    "consistency_probs": [0.2, 0.3, 0.5],
    "discount": 0.9,
    "seed": 0,
}

# Validation thresholds
VALIDATION_CONFIG = {
    "probability_tolerance": 1e-9,
    "max_ensemble_size": 256,
    "max_deep_sea_size": 64,
    "max_tree_depth": 512,
    "max_workers": 64,
}
