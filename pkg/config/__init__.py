"""
Configuration Package
"""

from .config import (
    AGENT_DEFAULTS,
    BIAS_CONFIG,
    ENV_DEFAULTS,
    EXPERIMENT_DEFAULTS,
    LOG_CONFIG,
    VALIDATION_CONFIG,
    PROJECT_ROOT,
    LOGS_DIR,
    CONFIGS_DIR,
    RESULTS_DIR,
)

__all__ = [
    "AGENT_DEFAULTS",
    "BIAS_CONFIG",
    "ENV_DEFAULTS",
    "EXPERIMENT_DEFAULTS",
    "LOG_CONFIG",
    "VALIDATION_CONFIG",
    "PROJECT_ROOT",
    "LOGS_DIR",
    "CONFIGS_DIR",
    "RESULTS_DIR",
]
