"""
Settings Module - Experiment configuration from YAML files and CLI overrides

File layout (every section and key optional, unknown ones rejected):

    environment:   name (deep_sea | binary_tree), sizes, stochastic, unscaled_move_cost
    agent:         any TduConfig field
    sweep:         variants, betas, prior_scales, num_explorers, seeds
    experiment:    episodes, budget_ceiling, num_workers, output_dir, solve_threshold,
                   retain_window, regret_window, stop_on_retain, show_progress
    bias:          any BIAS_CONFIG key
"""
import re
import sys
from collections import abc
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union, get_args, get_origin, get_type_hints

import yaml
from loguru import logger

sys.path.append(str(Path(__file__).parent.parent))

from config.config import BIAS_CONFIG, ENV_DEFAULTS, EXPERIMENT_DEFAULTS, LOG_CONFIG, LOGS_DIR, RESULTS_DIR
from tdu.exceptions import ConfigError
from tdu.heads import TduConfig

logger.add(
    LOGS_DIR / "settings.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)


@dataclass(frozen=True)
class EnvironmentSpec:
    name: str = "deep_sea"
    sizes: Sequence[int] = (10,)
    stochastic: bool = False
    unscaled_move_cost: float = ENV_DEFAULTS["deep_sea_unscaled_move_cost"]


@dataclass(frozen=True)
class SweepSpec:
    """Lists swept in a grid; None means the single value from the agent section"""

    variants: Optional[Sequence[str]] = None
    betas: Optional[Sequence[float]] = None
    prior_scales: Optional[Sequence[float]] = None
    num_explorers: Optional[Sequence[int]] = None
    seeds: Sequence[int] = (0,)


@dataclass(frozen=True)
class RunSettings:
    episodes: Optional[int] = None
    budget_ceiling: int = EXPERIMENT_DEFAULTS["budget_ceiling"]
    num_workers: int = EXPERIMENT_DEFAULTS["num_workers"]
    output_dir: str = str(RESULTS_DIR)
    solve_threshold: float = EXPERIMENT_DEFAULTS["solve_threshold"]
    retain_window: int = EXPERIMENT_DEFAULTS["retain_window"]
    regret_window: Optional[int] = EXPERIMENT_DEFAULTS["regret_window"]
    stop_on_retain: bool = False
    show_progress: bool = True


@dataclass(frozen=True)
class RunSpec:
    """Everything one deterministic run needs"""

    run_id: str
    env: Dict[str, Any]
    agent: TduConfig
    seed: int
    episodes: int
    solve_threshold: float
    retain_window: int
    regret_window: Optional[int]
    stop_on_retain: bool = False

    @property
    def size(self) -> int:
        return int(self.env["size"])

    @property
    def budget_below_horizon(self) -> bool:
        """Deep Sea budget smaller than 2^N, so a failure to solve is censored"""
        return self.env["name"] == "deep_sea" and self.episodes < 2 ** self.size


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    agent: TduConfig = field(default_factory=TduConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    experiment: RunSettings = field(default_factory=RunSettings)
    bias: Dict[str, Any] = field(default_factory=lambda: dict(BIAS_CONFIG))

    @property
    def output_dir(self) -> Path:
        return Path(self.experiment.output_dir)

    def budget_for(self, size: int) -> int:
        """Episode budget: explicit, else min(2^N, ceiling) on Deep Sea, else the ceiling"""
        if self.experiment.episodes is not None:
            return int(self.experiment.episodes)
        if self.environment.name == "deep_sea":
            return int(min(2 ** size, self.experiment.budget_ceiling))
        return int(self.experiment.budget_ceiling)

    def run_specs(self) -> List[RunSpec]:
        """Expand the sweep grid in a fixed order: size, variant, beta, lambda, explorers, seed"""
        base = self.agent
        sweep = self.sweep
        ensemble = base.ensemble_size
        specs = []
        for size in self.environment.sizes:
            for variant in sweep.variants or [base.variant]:
                for beta in sweep.betas or [base.beta]:
                    for prior_scale in sweep.prior_scales or [base.prior_scale]:
                        for n_explore in sweep.num_explorers if sweep.num_explorers is not None else [base.num_explorers]:
                            agent = replace(
                                base,
                                variant=variant,
                                beta=float(beta),
                                prior_scale=float(prior_scale),
                                num_explorers=int(n_explore),
                                num_exploiters=ensemble - int(n_explore) if sweep.num_explorers is not None else base.num_exploiters,
                            )
                            for seed in sweep.seeds:
                                run_id = _slug(
                                    f"{self.environment.name}-{size}-{variant}-b{beta:g}-l{prior_scale:g}-n{n_explore}-s{seed}"
                                )
                                specs.append(RunSpec(
                                    run_id=run_id,
                                    env={
                                        "name": self.environment.name,
                                        "size": int(size),
                                        "stochastic": bool(self.environment.stochastic),
                                        "unscaled_move_cost": float(self.environment.unscaled_move_cost),
                                    },
                                    agent=agent,
                                    seed=int(seed),
                                    episodes=self.budget_for(int(size)),
                                    solve_threshold=self.experiment.solve_threshold,
                                    retain_window=self.experiment.retain_window,
                                    regret_window=self.experiment.regret_window,
                                    stop_on_retain=self.experiment.stop_on_retain,
                                ))
        return specs

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["agent"]["hidden_sizes"] = list(self.agent.hidden_sizes)
        return data


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


SECTIONS = {
    "environment": EnvironmentSpec,
    "agent": TduConfig,
    "sweep": SweepSpec,
    "experiment": RunSettings,
}

LIST_KEYS = {
    "environment": {"sizes"},
    "agent": {"hidden_sizes"},
    "sweep": {"variants", "betas", "prior_scales", "num_explorers", "seeds"},
    "bias": {"consistency_probs"},
}


def _known_keys(section: str) -> List[str]:
    if section == "bias":
        return list(BIAS_CONFIG)
    return [f.name for f in fields(SECTIONS[section])]


def _check_keys(raw: Dict[str, Any]) -> None:
    errors = []
    for section, values in raw.items():
        if section not in SECTIONS and section != "bias":
            errors.append(f"unknown section '{section}'")
            continue
        if values is None:
            continue
        if not isinstance(values, dict):
            errors.append(f"section '{section}' must be a mapping")
            continue
        known = _known_keys(section)
        for key in values:
            if key not in known:
                errors.append(f"unknown key '{section}.{key}'")
    if errors:
        raise ConfigError("Invalid configuration", errors)


def parse_set_items(items: Sequence[str]) -> Dict[str, Dict[str, Any]]:
    """
    Parse `section.key=value` overrides; values are YAML scalars or lists

    Raises:
        ConfigError: On malformed items
    """
    parsed: Dict[str, Dict[str, Any]] = {}
    for item in items or []:
        match = re.fullmatch(r"([A-Za-z_]+)\.([A-Za-z_0-9]+)=(.*)", item.strip())
        if not match:
            raise ConfigError(f"Malformed override '{item}', expected section.key=value")
        section, key, value = match.groups()
        try:
            parsed.setdefault(section, {})[key] = yaml.safe_load(value) if value != "" else None
        except yaml.YAMLError as e:
            raise ConfigError(f"Override '{item}' is not valid YAML: {e}") from e
    return parsed


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = {section: dict(values or {}) for section, values in base.items()}
    for section, values in extra.items():
        merged.setdefault(section, {}).update(values)
    return merged


def _coerce(name: str, value: Any, hint: Any) -> Any:
    """
    Check `value` against a field annotation and convert numeric forms

    Integral floats become ints, ints become floats where a float is expected
    and numeric strings (YAML reads `1e-3` as text) are parsed. Booleans are
    never accepted as numbers.

    Raises:
        ValueError: If the value does not fit the annotation
    """
    origin, args = get_origin(hint), get_args(hint)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(name, value, inner[0])
    if origin in (list, tuple, abc.Sequence):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{name} must be a list, got {value!r}")
        item = args[0] if args else Any
        return tuple(_coerce(f"{name}[{i}]", v, item) for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{name} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, str) and re.fullmatch(r"[+-]?\d+", value.strip()):
            return int(value)
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{name} must be an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ValueError(f"{name} must be a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{name} must be a number, got {value!r}")
        return float(value)
    if hint is str:
        if isinstance(value, Path):
            return str(value)
        if not isinstance(value, str):
            raise ValueError(f"{name} must be a string, got {value!r}")
        return value
    return value


def _normalise(section: str, values: Dict[str, Any]) -> Dict[str, Any]:
    """Wrap scalars given for list-valued keys and type-check every value"""
    list_keys = LIST_KEYS.get(section, set())
    if section == "bias":
        hints = {key: _bias_hint(default) for key, default in BIAS_CONFIG.items()}
    else:
        hints = get_type_hints(SECTIONS[section])
    out = {}
    for key, value in values.items():
        if key in list_keys and value is not None and not isinstance(value, (list, tuple)):
            value = [value]
        out[key] = _coerce(f"{section}.{key}", value, hints.get(key, Any))
    return out


def _bias_hint(default: Any) -> Any:
    if isinstance(default, list):
        return Sequence[float]
    return type(default)


def build_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """
    Turn a parsed mapping into an ExperimentConfig

    Raises:
        ConfigError: On unknown keys or values the dataclasses reject
    """
    raw = {k: v for k, v in (raw or {}).items()}
    _check_keys(raw)
    try:
        env = EnvironmentSpec(**_normalise("environment", raw.get("environment") or {}))
        agent = TduConfig(**_normalise("agent", raw.get("agent") or {}))
        sweep = SweepSpec(**_normalise("sweep", raw.get("sweep") or {}))
        experiment = RunSettings(**_normalise("experiment", raw.get("experiment") or {}))
        bias = {**BIAS_CONFIG, **_normalise("bias", raw.get("bias") or {})}
        if "consistency_probs" in bias:
            bias["consistency_probs"] = list(bias["consistency_probs"])
    except (ValueError, TypeError) as e:
        raise ConfigError("Invalid configuration", [str(e)]) from e
    return ExperimentConfig(environment=env, agent=agent, sweep=sweep, experiment=experiment, bias=bias)


# Dedicated CLI flags -> (section, key) targets; a flag also pins the matching sweep list
FLAG_TARGETS = {
    "beta": (("agent", "beta"), ("sweep", "betas")),
    "prior_scale": (("agent", "prior_scale"), ("sweep", "prior_scales")),
    "variant": (("agent", "variant"), ("sweep", "variants")),
    "size": (("environment", "sizes"),),
    "seed": (("sweep", "seeds"),),
    "episodes": (("experiment", "episodes"),),
    "workers": (("experiment", "num_workers"),),
    "output_dir": (("experiment", "output_dir"),),
    "stochastic": (("environment", "stochastic"),),
}


def load_config(
    path: Optional[Path] = None,
    flags: Optional[Dict[str, Any]] = None,
    set_items: Optional[Sequence[str]] = None,
) -> ExperimentConfig:
    """
    Load a YAML experiment file and apply command-line overrides

    An empty or missing file gives the defaults. Flags win over the file and
    `--set` items win over flags.

    Args:
        path: YAML file, or None for defaults only
        flags: Dedicated flag values keyed as in FLAG_TARGETS (None = unset)
        set_items: Generic `section.key=value` overrides

    Raises:
        ConfigError: If the file cannot be read or a key is unknown or invalid
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {path} is not valid YAML: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must contain a mapping of sections")
        _check_keys(raw)
        logger.info(f"Loaded config file {path}")

    flag_overrides: Dict[str, Dict[str, Any]] = {}
    for name, value in (flags or {}).items():
        if value is None:
            continue
        if name not in FLAG_TARGETS:
            raise ConfigError(f"Unknown flag '{name}'")
        for section, key in FLAG_TARGETS[name]:
            flag_overrides.setdefault(section, {})[key] = value

    merged = _merge(_merge(raw, flag_overrides), parse_set_items(set_items or []))
    config = build_config(merged)
    logger.debug(f"Resolved config: {config.to_dict()}")
    return config
