"""Policy learning: weighted maximum-likelihood extraction from shifted
advantages, over a uniformly-floored softmax class.

Every realized policy has the form (1-eps) * softmax(logits) + eps/|A|, so
all action probabilities stay at or above eps/|A| > 0. The weighted MLE
objective is separable across (state, goal) cells; fitting runs a per-cell
adaptive-step gradient ascent on the logits from a zero initialization.
Weights are normalized within each cell before optimizing, which makes the
fitted policy exactly invariant to a global rescaling of the weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import OfflineDataset
from .mdp import (
    GoalMdp,
    OccupancyMeasure,
    Policy,
    exact_optimal_policy,
    j_value,
)
from .oracle import RegularizedSolution, SolveReport

__all__ = [
    "PolicyClass",
    "evaluate_suboptimality",
    "expected_tv",
    "fit_policy",
    "mle_logit_value_grad",
    "weighted_mle_objective",
]

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FLOOR = 1e-3
DEFAULT_POLICY_TOL = 1e-8
DEFAULT_POLICY_MAX_ITER = 200_000


@dataclass(frozen=True)
class PolicyClass:
    """Uniform-mixed softmax policies: pi = (1-eps) softmax(z) + eps/|A|."""

    n_states: int
    n_goals: int
    n_actions: int
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR
    kind: str = "tabular-softmax"

    def __post_init__(self):
        if not (0.0 < self.epsilon_floor < 1.0):
            raise ValueError("epsilon_floor must lie in (0, 1)")
        if self.kind != "tabular-softmax":
            raise ValueError(f"unknown policy-class kind {self.kind!r}")

    @property
    def tau(self) -> float:
        """Guaranteed lower bound eps/|A| on every action probability."""
        return self.epsilon_floor / self.n_actions

    def realize(self, logits: np.ndarray) -> Policy:
        return Policy(self._probs(logits))

    def _probs(self, logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max(axis=2, keepdims=True)
        e = np.exp(z)
        sigma = e / e.sum(axis=2, keepdims=True)
        return (1.0 - self.epsilon_floor) * sigma + self.epsilon_floor / self.n_actions


def weighted_mle_objective(
    dataset: OfflineDataset, u_records: np.ndarray, alpha: float, policy: Policy
) -> float:
    """(1/N) sum_i (u_i)_+ / alpha * log pi(a_i | s_i, g_i); always <= 0."""
    u_records = np.asarray(u_records, dtype=np.float64)
    if u_records.shape != (dataset.n,):
        raise ValueError("u_records must align one-to-one with the dataset")
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    w = np.clip(u_records, 0.0, None) / alpha
    active = w > 0.0
    if not active.any():
        return 0.0
    probs = policy.probs[dataset.s[active], dataset.g[active], dataset.a[active]]
    return float(w[active] @ np.log(probs)) / dataset.n


def _cell_weights(
    dataset: OfflineDataset, u_records: np.ndarray, alpha: float, pclass: PolicyClass
) -> np.ndarray:
    w = np.clip(np.asarray(u_records, dtype=np.float64), 0.0, None) / alpha
    table = np.zeros((pclass.n_states, pclass.n_goals, pclass.n_actions))
    np.add.at(table, (dataset.s, dataset.g, dataset.a), w)
    return table / dataset.n


def _mle_eval(weights: np.ndarray, logits: np.ndarray, eps: float):
    """Per-cell objective values and the logit gradient of
    sum_a weights * log((1-eps) softmax(z) + eps/|A|)."""
    n_actions = weights.shape[2]
    z = logits - logits.max(axis=2, keepdims=True)
    e = np.exp(z)
    sigma = e / e.sum(axis=2, keepdims=True)
    probs = (1.0 - eps) * sigma + eps / n_actions
    cell_values = np.einsum("sga,sga->sg", weights, np.log(probs))
    ratio = weights / probs
    inner = np.einsum("sga,sga->sg", sigma, ratio)
    grad = (1.0 - eps) * sigma * (ratio - inner[:, :, None])
    return probs, cell_values, grad


def mle_logit_value_grad(
    dataset: OfflineDataset,
    u_records: np.ndarray,
    alpha: float,
    pclass: PolicyClass,
    logits: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Weighted MLE objective and its analytic logit gradient.

    Agrees with weighted_mle_objective at the realized policy; the gradient
    is the one the fitting loop ascends.
    """
    weights = _cell_weights(dataset, u_records, alpha, pclass)
    _, cell_values, grad = _mle_eval(weights, np.asarray(logits, dtype=np.float64), pclass.epsilon_floor)
    return float(cell_values.sum()), grad


def fit_policy(
    dataset: OfflineDataset,
    u_records: np.ndarray,
    alpha: float,
    pclass: PolicyClass,
    tol: float = DEFAULT_POLICY_TOL,
    max_iter: int = DEFAULT_POLICY_MAX_ITER,
) -> tuple[Policy, SolveReport]:
    """Maximize the weighted MLE objective by logit gradient ascent.

    Deterministic (zero logit initialization, adaptive per-cell steps).
    Cells that receive no weight keep zero logits, i.e. stay uniform. When
    every weight is zero the uniform policy is returned with the report
    flagged degenerate. The recorded trace is the negated objective.
    """
    u_records = np.asarray(u_records, dtype=np.float64)
    if u_records.shape != (dataset.n,):
        raise ValueError("u_records must align one-to-one with the dataset")
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    w_table = _cell_weights(dataset, u_records, alpha, pclass)
    cell_mass = w_table.sum(axis=2)  # (S, G)
    if not (cell_mass > 0.0).any():
        report = SolveReport(
            objective_trace=[0.0],
            final_gradient_norm=0.0,
            tolerance_used=tol,
            converged=True,
            iterations=0,
            degenerate=True,
        )
        return pclass.realize(np.zeros(w_table.shape)), report

    # normalized per-cell weights: scale invariance and a scale-free tolerance
    wt = np.zeros_like(w_table)
    occupied = cell_mass > 0.0
    wt[occupied] = w_table[occupied] / cell_mass[occupied][:, None]

    eps = pclass.epsilon_floor
    z = np.zeros_like(w_table)
    # sign-based per-logit steps: saturating logits need step sizes many
    # orders of magnitude apart within one cell, so magnitudes adapt per
    # coordinate while acceptance stays per cell to keep the ascent monotone
    eta = np.full_like(w_table, 0.5)

    _, vals, grad = _mle_eval(wt, z, eps)
    trace = [-float((cell_mass * vals).sum())]
    grad_norm = np.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        grad_norm = float(np.abs(grad).max())
        if grad_norm <= tol:
            converged = True
            break
        cand_z = z + np.sign(grad) * eta
        _, cand_vals, cand_grad = _mle_eval(wt, cand_z, eps)
        improved = cand_vals > vals
        imp3 = improved[:, :, None]
        same_sign = np.sign(cand_grad) == np.sign(grad)
        eta = np.clip(
            np.where(imp3, np.where(same_sign, eta * 1.5, eta * 0.5), eta * 0.5),
            1e-20,
            64.0,
        )
        z = np.where(imp3, cand_z, z)
        vals = np.where(improved, cand_vals, vals)
        grad = np.where(imp3, cand_grad, grad)
        trace.append(-float((cell_mass * vals).sum()))
        if float(eta.max()) <= 1e-20:
            break  # no float-representable ascent left anywhere
    report = SolveReport(
        objective_trace=trace,
        final_gradient_norm=grad_norm,
        tolerance_used=tol,
        converged=converged,
        iterations=it,
    )
    return pclass.realize(z), report


def expected_tv(pi_a: Policy, pi_b: Policy, occupancy: OccupancyMeasure, goal_dist) -> float:
    """E_{(s,g) ~ occupancy x goal_dist} of the per-cell total variation."""
    if pi_a.probs.shape != pi_b.probs.shape:
        raise ValueError("policy shapes differ")
    p = np.asarray(goal_dist, dtype=np.float64)
    weights = occupancy.state_marginal() * p[None, :]
    tv = 0.5 * np.abs(pi_a.probs - pi_b.probs).sum(axis=2)
    return float((weights * tv).sum())


def evaluate_suboptimality(
    mdp: GoalMdp, pi_hat: Policy, solution: RegularizedSolution
) -> tuple[float, float]:
    """Exact suboptimality of a policy against the optimal and regularized
    optimal baselines: (J(pi*) - J(pi_hat), J(pi_alpha*) - J(pi_hat))."""
    _, j_opt = exact_optimal_policy(mdp)
    j_hat = j_value(mdp, pi_hat)
    j_reg = j_value(mdp, solution.pi_star_alpha)
    tv = expected_tv(solution.pi_star_alpha, pi_hat, solution.d_star_alpha, mdp.goal_dist)
    logger.debug("expected TV to the regularized optimal policy: %.6g", tv)
    return j_opt - j_hat, j_reg - j_hat
