"""
Bias Module - Exact moment checks for value-function uncertainty

Small enumerable MDPs with a finite belief over models are compared with a
parameter posterior over linear Q-functions. All moments are exact: finite
weight sets are enumerated and Gaussian weights use closed forms.

Conventions for a transition tau = (s, a, r, s') with a' = pi(s'):
    B      = E_theta[Q(s, a)]       - E_M[Q^M(s, a)]
    B'     = E_theta[Q(s', a')]     - E_M[Q^M(s', a')]
    C, C'  = same for E[Q^2]
    D      = E_theta[Q(s', a') Q(s, a)] - E_M[Q^M(s', a') Q^M(s, a)]
    rho = B'/B, phi = C'/C, kappa = D/C, alpha = E_M[Q^M(s', a')] / E_M[Q^M(s, a)]
Variance biases are measured directly as V_theta[.] - V_M[.].
"""
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

sys.path.append(str(Path(__file__).parent.parent))

from config.config import BIAS_CONFIG, LOG_CONFIG, LOGS_DIR, VALIDATION_CONFIG
from tdu.exceptions import InvalidArgumentError, SingularSystemError
from tdu.nn import RngStream

logger.add(
    LOGS_DIR / "bias.log",
    rotation=LOG_CONFIG["rotation"],
    retention=LOG_CONFIG["retention"],
    level=LOG_CONFIG["level"],
    format=LOG_CONFIG["format"],
    enqueue=LOG_CONFIG["enqueue"],
)

POSTERIOR_STRUCTURES = ("full", "final_layer_only", "fully_factorised")

SA_COLUMNS = [
    "state", "action",
    "posterior_mean", "posterior_var", "belief_mean", "belief_var",
    "mean_lhs", "mean_rhs", "mean_residual", "var_lhs", "var_rhs", "var_residual",
    "bias_mean", "bias_second_moment", "bias_var",
]

TRANSITION_COLUMNS = [
    "state", "action", "next_state", "next_action", "reward",
    "td_mean", "td_var", "belief_td_mean", "belief_td_var",
    "bias_td_mean", "bias_td_var", "bias_q_mean", "bias_q_var",
    "bias_next_mean", "bias_second_moment", "bias_next_second_moment", "bias_cross",
    "rho", "phi", "kappa", "alpha",
]


class TabularMdp:
    """
    Finite MDP with a deterministic evaluation policy

    Args:
        transitions: P[s, a, s'], rows summing to 1
        rewards: Mean reward R[s, a]
        discount: gamma in (0, 1]
        policy: pi[s], action taken in state s
        reward_std: Optional standard deviation of Gaussian rewards per (s, a)
    """

    def __init__(
        self,
        transitions: np.ndarray,
        rewards: np.ndarray,
        discount: float,
        policy: Optional[Sequence[int]] = None,
        reward_std: Optional[np.ndarray] = None,
    ):
        P = np.asarray(transitions, dtype=np.float64)
        R = np.asarray(rewards, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidArgumentError(f"transitions must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise InvalidArgumentError(f"rewards must have shape {P.shape[:2]}, got {R.shape}")
        tol = VALIDATION_CONFIG["probability_tolerance"]
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise InvalidArgumentError("transition probabilities must lie in [0, 1]")
        if not np.allclose(P.sum(axis=2), 1.0, rtol=0.0, atol=tol):
            raise InvalidArgumentError("transition rows must sum to 1")
        if not np.all(np.isfinite(R)):
            raise InvalidArgumentError("rewards must be finite")
        if not 0.0 < discount <= 1.0:
            raise InvalidArgumentError(f"discount must lie in (0, 1], got {discount}")
        pi = np.zeros(P.shape[0], dtype=np.int64) if policy is None else np.asarray(policy, dtype=np.int64)
        if pi.shape != (P.shape[0],) or np.any(pi < 0) or np.any(pi >= P.shape[1]):
            raise InvalidArgumentError("policy must give one valid action per state")
        if reward_std is not None:
            reward_std = np.asarray(reward_std, dtype=np.float64)
            if reward_std.shape != R.shape or np.any(reward_std < 0):
                raise InvalidArgumentError("reward_std must be a non-negative (S, A) table")
        self.transitions = P
        self.rewards = R
        self.discount = float(discount)
        self.policy = pi
        self.reward_std = reward_std

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def policy_matrix(self, policy: Optional[np.ndarray] = None) -> np.ndarray:
        """(S*A, S*A) matrix mapping Q to E[Q(s', pi(s')) | s, a]"""
        pi = self.policy if policy is None else np.asarray(policy, dtype=np.int64)
        S, A = self.num_states, self.num_actions
        M = np.zeros((S * A, S * A))
        for s_next in range(S):
            M[:, s_next * A + pi[s_next]] = self.transitions[:, :, s_next].reshape(-1)
        return M


def exact_q(mdp: TabularMdp, policy: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solve (I - gamma P_pi) q = r for the action-value table

    Raises:
        SingularSystemError: If the Bellman system has no unique solution
    """
    S, A = mdp.num_states, mdp.num_actions
    system = np.eye(S * A) - mdp.discount * mdp.policy_matrix(policy)
    if np.linalg.matrix_rank(system) < S * A:
        raise SingularSystemError("Bellman system is singular (discount 1 on a recurrent chain?)")
    try:
        q = np.linalg.solve(system, mdp.rewards.reshape(-1))
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"Bellman system could not be solved: {e}") from e
    return q.reshape(S, A)


class MdpBelief:
    """
    Finite distribution over MDPs sharing states, actions, discount and policy

    Raises:
        InvalidArgumentError: If probabilities are negative, do not sum to 1
            or the models disagree on structure
    """

    def __init__(self, models: Sequence[TabularMdp], probs: Optional[Sequence[float]] = None):
        models = list(models)
        if not models:
            raise InvalidArgumentError("a belief needs at least one model")
        p = np.full(len(models), 1.0 / len(models)) if probs is None else np.asarray(probs, dtype=np.float64)
        if p.shape != (len(models),):
            raise InvalidArgumentError(f"expected {len(models)} probabilities, got shape {p.shape}")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > VALIDATION_CONFIG["probability_tolerance"]:
            raise InvalidArgumentError(f"belief probabilities must be non-negative and sum to 1, got sum {p.sum()!r}")
        first = models[0]
        for m in models[1:]:
            if (
                m.transitions.shape != first.transitions.shape
                or m.discount != first.discount
                or not np.array_equal(m.policy, first.policy)
            ):
                raise InvalidArgumentError("belief models must share states, actions, discount and policy")
        self.models = models
        self.probs = p

    @property
    def discount(self) -> float:
        return self.models[0].discount

    @property
    def policy(self) -> np.ndarray:
        return self.models[0].policy

    def mean_model(self) -> TabularMdp:
        P = sum(p * m.transitions for p, m in zip(self.probs, self.models))
        R = sum(p * m.rewards for p, m in zip(self.probs, self.models))
        P = P / P.sum(axis=2, keepdims=True)
        return TabularMdp(P, R, self.discount, self.policy)

    def q_tables(self) -> np.ndarray:
        """(M, S, A) exact Q table of every model"""
        return np.stack([exact_q(m) for m in self.models])


def belief_moments(belief: MdpBelief) -> Tuple[np.ndarray, np.ndarray]:
    """Exact E_M[Q^M] and V_M[Q^M] tables"""
    q = belief.q_tables()
    p = belief.probs[:, None, None]
    mean = np.sum(p * q, axis=0)
    var = np.sum(p * (q - mean) ** 2, axis=0)
    return mean, var


@dataclass(frozen=True)
class ParamPosterior:
    """
    Distribution over linear Q-functions Q(s, a) = phi(s, a) . w

    Either a finite weight set (`weights`, `probs`, optionally
    `model_indices` pairing each sample with the belief member it was fitted
    to, -1 for none) or a Gaussian (`mean`, `cov`). A fully factorised
    posterior keeps only the diagonal of `cov`.
    """

    features: np.ndarray
    structure: str = "full"
    weights: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    model_indices: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.structure not in POSTERIOR_STRUCTURES:
            raise InvalidArgumentError(f"structure must be one of {POSTERIOR_STRUCTURES}, got {self.structure!r}")
        if self.features.ndim != 3 or not np.all(np.isfinite(self.features)):
            raise InvalidArgumentError("features must be a finite (S, A, n) array")
        n = self.features.shape[2]
        if self.is_finite:
            if self.weights.ndim != 2 or self.weights.shape[1] != n:
                raise InvalidArgumentError(f"weights must have shape (m, {n})")
            if self.probs.shape != (self.weights.shape[0],) or np.any(self.probs < 0):
                raise InvalidArgumentError("probs must give one non-negative weight per sample")
            if abs(self.probs.sum() - 1.0) > VALIDATION_CONFIG["probability_tolerance"]:
                raise InvalidArgumentError(f"posterior probabilities must sum to 1, got {self.probs.sum()!r}")
            if self.model_indices is not None and self.model_indices.shape != self.probs.shape:
                raise InvalidArgumentError("model_indices must have one entry per sample")
        else:
            if self.mean is None or self.cov is None:
                raise InvalidArgumentError("a posterior needs either a weight set or a Gaussian mean and covariance")
            if self.mean.shape != (n,) or self.cov.shape != (n, n):
                raise InvalidArgumentError(f"Gaussian posterior needs mean ({n},) and cov ({n}, {n})")
            if not np.allclose(self.cov, self.cov.T) or np.min(np.linalg.eigvalsh(self.cov)) < -1e-12:
                raise InvalidArgumentError("covariance must be symmetric positive semi-definite")

    @property
    def is_finite(self) -> bool:
        return self.weights is not None

    @property
    def effective_cov(self) -> np.ndarray:
        if self.structure == "fully_factorised":
            return np.diag(np.diag(self.cov))
        return self.cov

    @classmethod
    def finite(cls, features, weights, probs=None, model_indices=None, structure="full") -> "ParamPosterior":
        w = np.asarray(weights, dtype=np.float64)
        p = np.full(w.shape[0], 1.0 / w.shape[0]) if probs is None else np.asarray(probs, dtype=np.float64)
        idx = None if model_indices is None else np.asarray(model_indices, dtype=np.int64)
        return cls(np.asarray(features, dtype=np.float64), structure, w, p, idx)

    @classmethod
    def gaussian(cls, features, mean, cov, structure="full") -> "ParamPosterior":
        return cls(
            np.asarray(features, dtype=np.float64),
            structure,
            mean=np.asarray(mean, dtype=np.float64),
            cov=np.asarray(cov, dtype=np.float64),
        )

    @classmethod
    def from_q_tables(cls, q_tables, probs=None, model_indices=None) -> "ParamPosterior":
        """Tabular posterior: one-hot features and one weight vector per Q table"""
        q = np.asarray(q_tables, dtype=np.float64)
        _, S, A = q.shape
        features = np.eye(S * A).reshape(S, A, S * A)
        return cls.finite(features, q.reshape(q.shape[0], -1), probs, model_indices)

    def q_tables(self) -> np.ndarray:
        """(m, S, A) Q tables of a finite posterior"""
        if not self.is_finite:
            raise InvalidArgumentError("q_tables() is only defined for finite posteriors")
        return np.einsum("san,mn->msa", self.features, self.weights)

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        """Draw `size` Q tables"""
        if self.is_finite:
            idx = rng.generator.choice(self.weights.shape[0], size=size, p=self.probs)
            w = self.weights[idx]
        else:
            w = rng.generator.multivariate_normal(self.mean, self.effective_cov, size=size, method="eigh")
        return np.einsum("san,mn->msa", self.features, w)


@dataclass
class PosteriorMoments:
    """Exact posterior moments per (s, a) and per (s, a) -> (s', a') pair"""

    mean: np.ndarray
    second: np.ndarray
    var: np.ndarray
    cross: np.ndarray  # (S, A, S, A): E[Q(s', a') Q(s, a)] indexed [s, a, s', a']

    def td_moments(self, s: int, a: int, s_next: int, a_next: int, reward: float, discount: float) -> Tuple[float, float]:
        """Mean and variance of delta = gamma Q(s', a') + r - Q(s, a)"""
        g = discount
        mean = g * self.mean[s_next, a_next] + reward - self.mean[s, a]
        cov = self.cross[s, a, s_next, a_next] - self.mean[s_next, a_next] * self.mean[s, a]
        var = g * g * self.var[s_next, a_next] + self.var[s, a] - 2.0 * g * cov
        return float(mean), float(var)


def _finite_moments(q: np.ndarray, p: np.ndarray) -> PosteriorMoments:
    mean = np.einsum("m,msa->sa", p, q)
    centred = q - mean
    var = np.einsum("m,msa->sa", p, centred ** 2)
    cross = np.einsum("m,msa,mtb->satb", p, q, q)
    second = np.einsum("sasa->sa", cross).copy()
    return PosteriorMoments(mean, second, var, cross)


def posterior_moments(posterior: ParamPosterior) -> PosteriorMoments:
    """
    Exact E_theta[Q], E_theta[Q^2], V_theta[Q] and E_theta[Q Q'] tables

    Finite weight sets are enumerated; Gaussian weights give V = phi^T Sigma phi.
    """
    if posterior.is_finite:
        return _finite_moments(posterior.q_tables(), posterior.probs)
    phi = posterior.features
    S, A, n = phi.shape
    flat = phi.reshape(S * A, n)
    mean = (flat @ posterior.mean).reshape(S, A)
    cov = flat @ posterior.effective_cov @ flat.T
    var = np.diag(cov).reshape(S, A).copy()
    cross = (cov + np.outer(mean.reshape(-1), mean.reshape(-1))).reshape(S, A, S, A)
    return PosteriorMoments(mean, var + mean ** 2, var, cross)


def belief_posterior_moments(belief: MdpBelief) -> PosteriorMoments:
    """Moments of the push-forward of the belief, Q^M for M ~ p(M)"""
    return _finite_moments(belief.q_tables(), belief.probs)


def _bellman_targets(posterior: ParamPosterior, belief: MdpBelief) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and variance over theta of E_{r, s'}[r + gamma Q_theta(s', pi(s'))]

    Paired samples use their own model; everything else the belief-mean model.
    """
    mean_model = belief.mean_model()
    gamma = belief.discount
    if posterior.is_finite:
        q = posterior.q_tables()
        targets = np.empty_like(q)
        indices = posterior.model_indices
        for i in range(q.shape[0]):
            model = mean_model
            if indices is not None and indices[i] >= 0:
                model = belief.models[int(indices[i])]
            next_values = (model.policy_matrix() @ q[i].reshape(-1)).reshape(q[i].shape)
            targets[i] = model.rewards + gamma * next_values
        mean = np.einsum("m,msa->sa", posterior.probs, targets)
        var = np.einsum("m,msa->sa", posterior.probs, (targets - mean) ** 2)
        return mean, var
    phi = posterior.features
    S, A, n = phi.shape
    flat = phi.reshape(S * A, n)
    operator = gamma * mean_model.policy_matrix() @ flat
    mean = mean_model.rewards + (operator @ posterior.mean).reshape(S, A)
    var = np.diag(operator @ posterior.effective_cov @ operator.T).reshape(S, A)
    return mean, var


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den != 0.0 else float("nan")


@dataclass
class MomentReport:
    """Per-(s, a) and per-transition moment and bias tables"""

    per_state_action: pd.DataFrame
    per_transition: pd.DataFrame
    discount: float
    meta: Dict[str, float] = field(default_factory=dict)

    def max_abs_residual(self) -> Tuple[float, float]:
        sa = self.per_state_action
        return float(sa["mean_residual"].abs().max()), float(sa["var_residual"].abs().max())

    def to_csv(self, directory: Path, prefix: str) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{prefix}_state_action.csv", directory / f"{prefix}_transitions.csv"]
        self.per_state_action.to_csv(paths[0], index=False, float_format="%.17g")
        self.per_transition.to_csv(paths[1], index=False, float_format="%.17g")
        return paths


def bellman_residuals(posterior: ParamPosterior, belief: MdpBelief) -> MomentReport:
    """
    Measure moment consistency and estimator biases of a posterior

    Args:
        posterior: Posterior over Q-functions
        belief: Finite belief over MDPs defining the reference moments

    Returns:
        MomentReport; transitions are all (s, a, s') with positive mean-model
        probability, with r the mean-model reward
    """
    S, A = belief.models[0].num_states, belief.models[0].num_actions
    if posterior.features.shape[:2] != (S, A):
        raise InvalidArgumentError(f"posterior covers {posterior.features.shape[:2]} state-actions, belief {(S, A)}")
    gamma = belief.discount
    pm = posterior_moments(posterior)
    bm = belief_posterior_moments(belief)
    rhs_mean, rhs_var = _bellman_targets(posterior, belief)

    bias_mean = pm.mean - bm.mean
    bias_second = pm.second - bm.second
    bias_var = pm.var - bm.var

    sa_rows = []
    for s in range(S):
        for a in range(A):
            sa_rows.append({
                "state": s, "action": a,
                "posterior_mean": pm.mean[s, a], "posterior_var": pm.var[s, a],
                "belief_mean": bm.mean[s, a], "belief_var": bm.var[s, a],
                "mean_lhs": pm.mean[s, a], "mean_rhs": rhs_mean[s, a],
                "mean_residual": pm.mean[s, a] - rhs_mean[s, a],
                "var_lhs": pm.var[s, a], "var_rhs": rhs_var[s, a],
                "var_residual": pm.var[s, a] - rhs_var[s, a],
                "bias_mean": bias_mean[s, a], "bias_second_moment": bias_second[s, a], "bias_var": bias_var[s, a],
            })

    mean_model = belief.mean_model()
    pi = belief.policy
    tr_rows = []
    for s in range(S):
        for a in range(A):
            reward = float(mean_model.rewards[s, a])
            for s_next in np.flatnonzero(mean_model.transitions[s, a] > 0.0):
                s_next = int(s_next)
                a_next = int(pi[s_next])
                td_mean, td_var = pm.td_moments(s, a, s_next, a_next, reward, gamma)
                b_td_mean, b_td_var = bm.td_moments(s, a, s_next, a_next, reward, gamma)
                cross_bias = pm.cross[s, a, s_next, a_next] - bm.cross[s, a, s_next, a_next]
                tr_rows.append({
                    "state": s, "action": a, "next_state": s_next, "next_action": a_next, "reward": reward,
                    "td_mean": td_mean, "td_var": td_var,
                    "belief_td_mean": b_td_mean, "belief_td_var": b_td_var,
                    "bias_td_mean": td_mean - b_td_mean, "bias_td_var": td_var - b_td_var,
                    "bias_q_mean": bias_mean[s, a], "bias_q_var": bias_var[s, a],
                    "bias_next_mean": bias_mean[s_next, a_next],
                    "bias_second_moment": bias_second[s, a],
                    "bias_next_second_moment": bias_second[s_next, a_next],
                    "bias_cross": cross_bias,
                    "rho": _ratio(bias_mean[s_next, a_next], bias_mean[s, a]),
                    "phi": _ratio(bias_second[s_next, a_next], bias_second[s, a]),
                    "kappa": _ratio(cross_bias, bias_second[s, a]),
                    "alpha": _ratio(bm.mean[s_next, a_next], bm.mean[s, a]),
                })

    report = MomentReport(
        per_state_action=pd.DataFrame(sa_rows, columns=SA_COLUMNS),
        per_transition=pd.DataFrame(tr_rows, columns=TRANSITION_COLUMNS),
        discount=gamma,
    )
    max_mean, max_var = report.max_abs_residual()
    logger.debug(f"Bellman residuals over {S * A} state-actions: mean {max_mean:.3e}, variance {max_var:.3e}")
    return report


def _inside(value: float, low: float, high: float, margin: float) -> bool:
    return low + margin < value < high - margin


def _near(value: float, low: float, high: float, margin: float) -> bool:
    return abs(value - low) <= margin or abs(value - high) <= margin


@dataclass
class BiasComparison:
    """Per-transition condition/ordering flags and aggregate agreement rates"""

    table: pd.DataFrame
    summary: Dict[str, float]


def bias_comparison(report: MomentReport, margin: float = BIAS_CONFIG["window_margin"]) -> BiasComparison:
    """
    Check the sufficient conditions for TD-error moments having lower bias

    Mean: rho in (0, 2/gamma) implies |Bias(E[delta|tau])| < |Bias(E[Q])|.
    Variance: rho, alpha, kappa in (0, 2/gamma) and phi in
    (1 - 2 gamma kappa, (2/gamma)^2) is the sufficient window. Only the open
    interior (shrunk by `margin`) counts as inside; ratios within `margin` of
    an edge are flagged as boundary cases. Undefined ratios are excluded.
    """
    gamma = report.discount
    upper = 2.0 / gamma
    rows = []
    for _, r in report.per_transition.iterrows():
        rho, phi, kappa, alpha = r["rho"], r["phi"], r["kappa"], r["alpha"]
        mean_defined = bool(np.isfinite(rho))
        var_defined = bool(np.all(np.isfinite([rho, phi, kappa, alpha])))
        mean_condition = mean_defined and _inside(rho, 0.0, upper, margin)
        var_condition = var_defined and (
            _inside(rho, 0.0, upper, margin)
            and _inside(alpha, 0.0, upper, margin)
            and _inside(kappa, 0.0, upper, margin)
            and _inside(phi, 1.0 - 2.0 * gamma * kappa, upper ** 2, margin)
        )
        boundary = var_defined and (
            _near(rho, 0.0, upper, margin) or _near(alpha, 0.0, upper, margin)
            or _near(kappa, 0.0, upper, margin) or _near(phi, 1.0 - 2.0 * gamma * kappa, upper ** 2, margin)
        )
        rows.append({
            "state": int(r["state"]), "action": int(r["action"]), "next_state": int(r["next_state"]),
            "mean_defined": mean_defined,
            "mean_condition": mean_condition,
            "mean_ordering": abs(r["bias_td_mean"]) < abs(r["bias_q_mean"]),
            "var_defined": var_defined,
            "var_condition": var_condition,
            "var_ordering": abs(r["bias_td_var"]) < abs(r["bias_q_var"]),
            "boundary": boundary,
        })
    table = pd.DataFrame(rows, columns=[
        "state", "action", "next_state", "mean_defined", "mean_condition", "mean_ordering",
        "var_defined", "var_condition", "var_ordering", "boundary",
    ])

    def rate(condition: str, ordering: str) -> float:
        hits = table[table[condition]]
        return float(hits[ordering].mean()) if len(hits) else float("nan")

    summary = {
        "transitions": float(len(table)),
        "mean_condition_count": float(table["mean_condition"].sum()) if len(table) else 0.0,
        "mean_agreement": rate("mean_condition", "mean_ordering"),
        "var_condition_count": float(table["var_condition"].sum()) if len(table) else 0.0,
        "var_agreement": rate("var_condition", "var_ordering"),
        "boundary_count": float(table["boundary"].sum()) if len(table) else 0.0,
    }
    return BiasComparison(table=table, summary=summary)
