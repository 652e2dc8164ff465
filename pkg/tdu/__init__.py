"""
TDU Exploration Lab - ensemble Q-learning with TD-error uncertainty
"""

__version__ = "1.0.0"

from .agents import EnsembleAgent, load_checkpoint, save_checkpoint
from .envs import BinaryTreeEnv, DeepSeaEnv, make_env, optimal_return
from .experiment import SweepRunner, run_bias_suite, run_single, run_sweep
from .heads import TduConfig
from .replay import ReplayBuffer
from .settings import ExperimentConfig, load_config
from .validate import ConfigValidator

__all__ = [
    "EnsembleAgent",
    "load_checkpoint",
    "save_checkpoint",
    "BinaryTreeEnv",
    "DeepSeaEnv",
    "make_env",
    "optimal_return",
    "SweepRunner",
    "run_bias_suite",
    "run_single",
    "run_sweep",
    "TduConfig",
    "ReplayBuffer",
    "ExperimentConfig",
    "load_config",
    "ConfigValidator",
]
