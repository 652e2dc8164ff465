"""
Constructed instances for the bias verifier

Each construction builds a belief and a posterior with a known answer and
checks the measured moments against it.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from config.config import BIAS_CONFIG
from tdu.bias import (
    BiasComparison,
    MdpBelief,
    MomentReport,
    ParamPosterior,
    TabularMdp,
    bellman_residuals,
    bias_comparison,
)
from tdu.nn import RngStream


@dataclass
class ConstructionResult:
    """Outcome of one construction"""

    name: str
    passed: bool
    metric: float
    threshold: float
    message: str
    report: Optional[MomentReport] = None
    comparison: Optional[BiasComparison] = None


def chain_mdp(num_states: int, rewards: np.ndarray, discount: float) -> TabularMdp:
    """Single-action chain s -> s+1 whose last state loops on itself"""
    P = np.zeros((num_states, 1, num_states))
    for s in range(num_states):
        P[s, 0, min(s + 1, num_states - 1)] = 1.0
    return TabularMdp(P, np.asarray(rewards, dtype=np.float64).reshape(num_states, 1), discount)


def random_mdp(rng: RngStream, num_states: int, num_actions: int, discount: float) -> TabularMdp:
    P = rng.generator.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    R = rng.normal(0.0, 1.0, size=(num_states, num_actions))
    policy = rng.integers(0, num_actions, size=num_states)
    return TabularMdp(P, R, discount, policy)


def consistency_case(settings: Dict) -> ConstructionResult:
    """Posterior is the push-forward of the belief; every residual must vanish"""
    gamma = settings["discount"]
    rng = RngStream(settings["seed"]).split("consistency")
    probs = settings["consistency_probs"]
    base = random_mdp(rng.split("base"), 3, 2, gamma)
    models = []
    for i in range(len(probs)):
        member = rng.split(f"member-{i}")
        P = 0.5 * base.transitions + 0.5 * member.generator.dirichlet(np.ones(3), size=(3, 2))
        R = base.rewards + member.normal(0.0, 1.0, size=base.rewards.shape)
        models.append(TabularMdp(P, R, gamma, base.policy))
    belief = MdpBelief(models, probs)
    posterior = ParamPosterior.from_q_tables(belief.q_tables(), belief.probs, model_indices=np.arange(len(models)))
    report = bellman_residuals(posterior, belief)
    max_mean, max_var = report.max_abs_residual()
    worst = max(max_mean, max_var, float(report.per_state_action["bias_mean"].abs().max()))
    tol = settings["consistency_tolerance"]
    return ConstructionResult(
        name="consistency",
        passed=worst <= tol,
        metric=worst,
        threshold=tol,
        message=f"max residual/bias {worst:.3e} (tolerance {tol:.0e})",
        report=report,
    )


def limited_features_case(settings: Dict) -> ConstructionResult:
    """
    Two-feature linear posterior on a six-state chain

    Each sample is the least-squares fit of one model's Q table, so the
    posterior cannot represent the per-state values and the mean residual
    must be nonzero.
    """
    gamma = settings["discount"]
    n_states = 6
    scales = (0.5, 1.0, 1.5)
    base_rewards = np.array([0.0, 0.1, 0.0, 0.3, 0.0, 1.0])
    models = [chain_mdp(n_states, scale * base_rewards, gamma) for scale in scales]
    belief = MdpBelief(models)
    positions = np.arange(n_states) / (n_states - 1)
    features = np.stack([np.ones(n_states), positions], axis=1).reshape(n_states, 1, 2)
    flat = features.reshape(n_states, 2)
    weights = np.stack([np.linalg.lstsq(flat, q.reshape(-1), rcond=None)[0] for q in belief.q_tables()])
    posterior = ParamPosterior.finite(
        features, weights, belief.probs, model_indices=np.arange(len(models)), structure="final_layer_only"
    )
    report = bellman_residuals(posterior, belief)
    sa = report.per_state_action
    threshold = settings["nonzero_residual_threshold"]
    unique = int(np.unique(np.round(sa["posterior_mean"].to_numpy(), 12)).size)
    nonzero_td = int((sa["mean_residual"].abs() > threshold).sum())
    max_mean, _ = report.max_abs_residual()
    passed = max_mean > threshold and min(unique, nonzero_td) > flat.shape[1] + 1
    return ConstructionResult(
        name="limited_features",
        passed=passed,
        metric=max_mean,
        threshold=threshold,
        message=f"max mean residual {max_mean:.3e}; {unique} unique predictions, {nonzero_td} nonzero TD errors, n=2",
        report=report,
    )


def two_step_chain(q_now: np.ndarray, q_next: np.ndarray, discount: float) -> List[TabularMdp]:
    """
    One three-state chain per model whose exact Q is `q_now[m]` at state 0,
    `q_next[m]` at state 1 and zero at the absorbing state 2
    """
    return [
        chain_mdp(3, [[now - discount * nxt], [nxt], [0.0]], discount)
        for now, nxt in zip(q_now, q_next)
    ]


def _chain_q_tables(q_now: np.ndarray, q_next: np.ndarray) -> np.ndarray:
    q = np.zeros((len(q_now), 3, 1))
    q[:, 0, 0] = q_now
    q[:, 1, 0] = q_next
    return q


def _first_step(report: MomentReport) -> pd.Series:
    tr = report.per_transition
    return tr[(tr["state"] == 0) & (tr["next_state"] == 1)].iloc[0]


def variance_identity_case(settings: Dict) -> ConstructionResult:
    """
    Bias ratios of one on a chain whose successor carries extra belief variance

    The belief and the posterior share the spread added at the successor
    and differ only at state 0, so rho = phi = kappa = alpha = 1 on 0 -> 1
    while the variances at 0 and 1 differ. The TD variance bias must then be
    (gamma - 1)^2 times the Q variance bias.
    """
    gamma = settings["discount"]
    signs = np.array([(i, j) for i in (-1.0, 1.0) for j in (-1.0, 1.0)])
    now = 2.0 + 0.5 * signs[:, 0]
    belief = MdpBelief(two_step_chain(now, now + signs[:, 1], gamma))
    shifted = 2.3 + 0.8 * signs[:, 0]
    posterior = ParamPosterior.from_q_tables(_chain_q_tables(shifted, shifted + signs[:, 1]))
    report = bellman_residuals(posterior, belief)
    row = _first_step(report)
    tol = settings["identity_tolerance"]
    error = abs(row["bias_td_var"] - (gamma - 1.0) ** 2 * row["bias_q_var"])
    ratio_error = max(abs(row[name] - 1.0) for name in ("rho", "phi", "kappa", "alpha"))
    belief_var = report.per_state_action["belief_var"].to_numpy()
    return ConstructionResult(
        name="variance_identity",
        passed=error <= tol and ratio_error <= tol and abs(row["bias_q_var"]) > settings["nonzero_residual_threshold"],
        metric=float(error),
        threshold=tol,
        message=(
            f"identity error {error:.3e}, largest ratio deviation from 1 {ratio_error:.3e}, "
            f"belief variance {belief_var[0]:.3f} -> {belief_var[1]:.3f}"
        ),
        report=report,
        comparison=bias_comparison(report, settings["window_margin"]),
    )


def unbiased_variance_case(settings: Dict) -> ConstructionResult:
    """
    rho = kappa = 1/gamma and phi = 1/gamma^2 leave the TD variance unbiased
    whatever alpha is

    Each posterior sample adds g to the model's Q at state 0 and g/gamma at
    state 1, with g orthogonal to both Q columns and of nonzero mean.
    """
    gamma = settings["discount"]
    tol = settings["identity_tolerance"]
    now = np.array([1.0, 2.0, 3.0])
    worst, smallest_q_bias = 0.0, float("inf")
    report = None
    for alpha in settings["unbiased_variance_alphas"]:
        nxt = alpha * now.mean() + 0.5 * np.array([1.0, -1.0, 0.0])
        offset = np.cross(now, nxt)
        offset *= 0.4 / offset.mean()
        belief = MdpBelief(two_step_chain(now, nxt, gamma))
        posterior = ParamPosterior.from_q_tables(_chain_q_tables(now + offset, nxt + offset / gamma))
        report = bellman_residuals(posterior, belief)
        row = _first_step(report)
        deviations = (
            abs(row["rho"] - 1.0 / gamma),
            abs(row["kappa"] - 1.0 / gamma),
            abs(row["phi"] - 1.0 / gamma ** 2),
            abs(row["alpha"] - alpha),
            abs(row["bias_td_mean"]),
            abs(row["bias_td_var"]),
        )
        worst = max(worst, *deviations)
        smallest_q_bias = min(smallest_q_bias, abs(row["bias_q_var"]))
    alphas = ", ".join(f"{a:g}" for a in settings["unbiased_variance_alphas"])
    return ConstructionResult(
        name="unbiased_td_variance",
        passed=worst <= tol and smallest_q_bias > settings["nonzero_residual_threshold"],
        metric=float(worst),
        threshold=tol,
        message=f"alpha in [{alphas}]: worst deviation {worst:.3e}, smallest |Bias(V[Q])| {smallest_q_bias:.3f}",
        report=report,
        comparison=bias_comparison(report, settings["window_margin"]),
    )


def _offset_chain_case(settings: Dict, ratio: float, name: str) -> ConstructionResult:
    gamma = settings["discount"]
    models = [chain_mdp(2, [[0.0], [r]], gamma) for r in (0.5, 1.0, 1.5)]
    belief = MdpBelief(models)
    bias = 0.25
    offsets = np.array([[bias], [ratio * bias / gamma]])
    posterior = ParamPosterior.from_q_tables(belief.q_tables() + offsets, belief.probs)
    report = bellman_residuals(posterior, belief)
    comparison = bias_comparison(report, settings["window_margin"])
    tr = report.per_transition
    row = tr[(tr["state"] == 0) & (tr["next_state"] == 1)].iloc[0]
    flags = comparison.table[(comparison.table["state"] == 0) & (comparison.table["next_state"] == 1)].iloc[0]
    td_bias = abs(float(row["bias_td_mean"]))
    if ratio == 1.0:
        tol = settings["consistency_tolerance"]
        return ConstructionResult(
            name=name, passed=td_bias <= tol and bool(flags["mean_condition"]), metric=td_bias, threshold=tol,
            message=f"rho={row['rho']:.6f}, |Bias(E[delta])|={td_bias:.3e}", report=report, comparison=comparison,
        )
    return ConstructionResult(
        name=name, passed=not bool(flags["mean_condition"]), metric=float(row["rho"]), threshold=2.0 / gamma,
        message=f"rho={row['rho']:.6f} outside (0, {2.0 / gamma:.4f}); no ordering asserted",
        report=report, comparison=comparison,
    )


def unbiased_td_case(settings: Dict) -> ConstructionResult:
    """Bias at the successor equals the current bias over gamma"""
    return _offset_chain_case(settings, 1.0, "unbiased_td_mean")


def out_of_window_case(settings: Dict) -> ConstructionResult:
    """Successor bias three times the current bias over gamma"""
    return _offset_chain_case(settings, 3.0, "out_of_window")


def random_instances_case(settings: Dict) -> ConstructionResult:
    """
    Random MDPs, beliefs and posteriors with temporally smooth bias

    Whenever rho lies inside the window the mean ordering must hold.
    """
    gamma = settings["discount"]
    root = RngStream(settings["seed"]).split("random-instances")
    checked, held, var_checked, var_held = 0, 0, 0, 0
    for i in range(settings["num_random_instances"]):
        rng = root.split(f"instance-{i}")
        base = random_mdp(rng.split("base"), 4, 2, gamma)
        models = []
        for j in range(3):
            member = rng.split(f"member-{j}")
            P = 0.7 * base.transitions + 0.3 * member.generator.dirichlet(np.ones(4), size=(4, 2))
            models.append(TabularMdp(P, base.rewards + 0.3 * member.normal(size=(4, 2)), gamma, base.policy))
        belief = MdpBelief(models)
        mean_q = np.mean(belief.q_tables(), axis=0)
        shift = rng.normal(0.0, 1.0) + 0.2 * rng.normal(size=mean_q.shape)
        samples = mean_q + shift + rng.normal(0.0, 0.5, size=(5,) + mean_q.shape)
        comparison = bias_comparison(
            bellman_residuals(ParamPosterior.from_q_tables(samples), belief), settings["window_margin"]
        )
        table = comparison.table
        inside = table[table["mean_condition"]]
        checked += len(inside)
        held += int(inside["mean_ordering"].sum())
        var_inside = table[table["var_condition"]]
        var_checked += len(var_inside)
        var_held += int(var_inside["var_ordering"].sum())
    rate = held / checked if checked else float("nan")
    var_rate = var_held / var_checked if var_checked else float("nan")
    return ConstructionResult(
        name="random_instances",
        passed=checked > 0 and held == checked,
        metric=rate,
        threshold=1.0,
        message=(
            f"mean ordering held in {held:,}/{checked:,} in-window transitions; "
            f"variance ordering held in {var_held:,}/{var_checked:,}"
        ),
    )


CONSTRUCTIONS = (
    consistency_case,
    limited_features_case,
    variance_identity_case,
    unbiased_variance_case,
    unbiased_td_case,
    out_of_window_case,
    random_instances_case,
)


def run_constructions(settings: Optional[Dict] = None) -> List[ConstructionResult]:
    """
    Run every construction

    Args:
        settings: Overrides of BIAS_CONFIG keys

    Returns:
        One result per construction, in a fixed order
    """
    merged = {**BIAS_CONFIG, **(settings or {})}
    results = []
    for construction in CONSTRUCTIONS:
        result = construction(merged)
        status = "✓" if result.passed else "✗"
        logger.info(f"{status} {result.name}: {result.message}")
        results.append(result)
    return results
