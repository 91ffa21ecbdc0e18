"""Value learning: minimize the empirical dual objective and emit per-record
shifted advantages.

Two estimators are provided. The sample-bootstrap form replaces the expected
next-state value with the recorded s' (unbiased under deterministic
dynamics); the model form first fits a tabular transition model by maximum
likelihood and bootstraps through it, avoiding the squared-expectation
over-estimation that the sample form suffers under stochastic dynamics.

Fitting is deterministic full-batch minimization over the value class. The
objectives depend on the data only through per-group sufficient statistics,
so fits cost the same regardless of dataset size; the per-record values that
policy learning consumes are evaluated on the raw records through the same
residual code path as the objectives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import InitDataset, OfflineDataset
from .mdp import ValueFn
from .optim import ClampedQuadraticObjective, minimize_box
from .oracle import SolveReport

__all__ = [
    "TransitionModel",
    "ValueClass",
    "build_deterministic_objective",
    "build_stochastic_objective",
    "empirical_dual_deterministic",
    "empirical_dual_stochastic",
    "fit_transition_mle",
    "fit_v_deterministic",
    "fit_v_stochastic",
    "linear_value_class",
    "record_residuals",
    "record_residuals_model",
    "tabular_value_class",
    "u_records",
    "u_records_model",
]

DEFAULT_FIT_TOL = 1e-9
DEFAULT_FIT_MAX_ITER = 200_000


@dataclass(frozen=True)
class ValueClass:
    """Hypothesis class for value tables.

    tabular: all of [0, v_max]^(S x G). linear: clip(phi(s,g) . w, 0, v_max)
    for a fixed feature map phi of shape (S, G, k).
    """

    kind: str
    n_states: int
    n_goals: int
    v_max: float
    feature_map: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("tabular", "linear"):
            raise ValueError(f"unknown value-class kind {self.kind!r}")
        if self.v_max < 0.0:
            raise ValueError("v_max must be nonnegative")
        if self.kind == "linear":
            phi = np.asarray(self.feature_map, dtype=np.float64)
            if phi.ndim != 3 or phi.shape[:2] != (self.n_states, self.n_goals):
                raise ValueError("feature_map must have shape (S, G, k)")
            phi = phi.copy()
            phi.setflags(write=False)
            object.__setattr__(self, "feature_map", phi)
        elif self.feature_map is not None:
            raise ValueError("tabular class takes no feature map")


def tabular_value_class(n_states: int, n_goals: int, v_max: float) -> ValueClass:
    return ValueClass("tabular", n_states, n_goals, v_max)


def linear_value_class(feature_map: np.ndarray, v_max: float) -> ValueClass:
    phi = np.asarray(feature_map, dtype=np.float64)
    return ValueClass("linear", phi.shape[0], phi.shape[1], v_max, feature_map=phi)


@dataclass(frozen=True)
class TransitionModel:
    """Tabular transition estimate; rows for unvisited pairs are uniform."""

    p_hat: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_hat, dtype=np.float64, copy=True)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"model table must be (S, A, S), got {p.shape}")
        if np.any(p < 0.0):
            raise ValueError("model has negative entries")
        if np.abs(p.sum(axis=2) - 1.0).max() > 1e-12:
            raise ValueError("model rows must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "p_hat", p)


def fit_transition_mle(dataset: OfflineDataset, n_states: int, n_actions: int) -> TransitionModel:
    """Maximum-likelihood tabular model: empirical conditional frequencies."""
    counts = np.zeros((n_states, n_actions, n_states))
    np.add.at(counts, (dataset.s, dataset.a, dataset.s_next), 1.0)
    totals = counts.sum(axis=2)
    p_hat = np.full((n_states, n_actions, n_states), 1.0 / n_states)
    visited = totals > 0.0
    p_hat[visited] = counts[visited] / totals[visited][:, None]
    return TransitionModel(p_hat)


# ---------------------------------------------------------------------------
# residuals: the single code path shared by objectives and u-records
# ---------------------------------------------------------------------------


def record_residuals(dataset: OfflineDataset, v_table: np.ndarray, gamma: float) -> np.ndarray:
    """Per-record r_i + gamma * v(s'_i; g_i) - v(s_i; g_i)."""
    return dataset.r + gamma * v_table[dataset.s_next, dataset.g] - v_table[dataset.s, dataset.g]


def record_residuals_model(
    dataset: OfflineDataset, v_table: np.ndarray, gamma: float, model: TransitionModel
) -> np.ndarray:
    """Per-record r_i + gamma * E_{s' ~ model}[v(s'; g_i)] - v(s_i; g_i)."""
    tv = np.einsum("np,pn->n", model.p_hat[dataset.s, dataset.a], v_table[:, dataset.g])
    return dataset.r + gamma * tv - v_table[dataset.s, dataset.g]


def u_records(dataset: OfflineDataset, v: ValueFn, alpha: float, gamma: float) -> np.ndarray:
    """Shifted advantages on the dataset records (sample bootstrap)."""
    return record_residuals(dataset, v.v, gamma) + alpha


def u_records_model(
    dataset: OfflineDataset, v: ValueFn, alpha: float, gamma: float, model: TransitionModel
) -> np.ndarray:
    """Shifted advantages on the dataset records (model bootstrap)."""
    return record_residuals_model(dataset, v.v, gamma, model) + alpha


def _init_linear_term(
    init_dataset: InitDataset, alpha: float, gamma: float, n_states: int, n_goals: int
) -> np.ndarray:
    if init_dataset.n0 == 0:
        raise ValueError("initial-pair dataset is empty")
    counts = np.zeros((n_states, n_goals))
    np.add.at(counts, (init_dataset.s0, init_dataset.g0), 1.0)
    return (alpha * (1.0 - gamma) / init_dataset.n0) * counts.ravel()


def empirical_dual_deterministic(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    v: ValueFn,
    gamma: float,
) -> float:
    """Sample-bootstrap estimator of the dual objective (alpha-scaled form)."""
    if dataset.n == 0:
        raise ValueError("transition dataset is empty")
    lin = _init_linear_term(init_dataset, alpha, gamma, *v.v.shape)
    u_plus = np.clip(record_residuals(dataset, v.v, gamma) + alpha, 0.0, None)
    return float(lin @ v.v.ravel()) + 0.5 * float(u_plus @ u_plus) / dataset.n


def empirical_dual_stochastic(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    model: TransitionModel,
    v: ValueFn,
    gamma: float,
) -> float:
    """Model-bootstrap estimator of the dual objective (alpha-scaled form)."""
    if dataset.n == 0:
        raise ValueError("transition dataset is empty")
    lin = _init_linear_term(init_dataset, alpha, gamma, *v.v.shape)
    u_plus = np.clip(record_residuals_model(dataset, v.v, gamma, model) + alpha, 0.0, None)
    return float(lin @ v.v.ravel()) + 0.5 * float(u_plus @ u_plus) / dataset.n


# ---------------------------------------------------------------------------
# fitting objectives over the flattened (S, G) table, grouped by sufficient
# statistics so the cost per step is independent of the dataset size
# ---------------------------------------------------------------------------


def build_deterministic_objective(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    gamma: float,
    n_states: int,
    n_goals: int,
) -> ClampedQuadraticObjective:
    """Grouped form of the sample-bootstrap objective over the value table."""
    if dataset.n == 0:
        raise ValueError("transition dataset is empty")
    S, G = n_states, n_goals
    key = (dataset.s * G + dataset.g) * S + dataset.s_next
    pairs = np.stack([key.astype(np.float64), dataset.r], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    ukey = uniq[:, 0].astype(np.int64)
    us = ukey // (G * S)
    ug = (ukey // S) % G
    usn = ukey % S
    J = ukey.size
    M = np.zeros((J, S * G))
    rows = np.arange(J)
    np.add.at(M, (rows, usn * G + ug), gamma)
    np.add.at(M, (rows, us * G + ug), -1.0)
    return ClampedQuadraticObjective(
        lin=_init_linear_term(init_dataset, alpha, gamma, S, G),
        w=counts / dataset.n,
        c=uniq[:, 1] + alpha,
        M=M,
    )


def build_stochastic_objective(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    gamma: float,
    model: TransitionModel,
    n_states: int,
    n_goals: int,
) -> ClampedQuadraticObjective:
    """Grouped form of the model-bootstrap objective over the value table."""
    if dataset.n == 0:
        raise ValueError("transition dataset is empty")
    S, G = n_states, n_goals
    key = (dataset.s * model.p_hat.shape[1] + dataset.a) * G + dataset.g
    pairs = np.stack([key.astype(np.float64), dataset.r], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    ukey = uniq[:, 0].astype(np.int64)
    A = model.p_hat.shape[1]
    ug = ukey % G
    ua = (ukey // G) % A
    us = ukey // (G * A)
    J = ukey.size
    M = np.zeros((J, S * G))
    for j in range(J):
        M[j, ug[j] :: G] = gamma * model.p_hat[us[j], ua[j]]
        M[j, us[j] * G + ug[j]] -= 1.0
    return ClampedQuadraticObjective(
        lin=_init_linear_term(init_dataset, alpha, gamma, S, G),
        w=counts / dataset.n,
        c=uniq[:, 1] + alpha,
        M=M,
    )


class _LinearRealization:
    """Objective over feature weights realizing v = clip(phi . w, 0, v_max)."""

    def __init__(self, inner: ClampedQuadraticObjective, phi: np.ndarray, v_max: float):
        self.inner = inner
        self.phi = phi  # (S*G, k)
        self.v_max = v_max

    def _realize(self, wvec):
        t = self.phi @ wvec
        return t, np.clip(t, 0.0, self.v_max)

    def _active(self, t, g_t):
        # pass the one-sided derivative through the clip whenever descent
        # moves the realized value back into the box
        return ((t > 0.0) | (g_t < 0.0)) & ((t < self.v_max) | (g_t > 0.0))

    def value_grad(self, wvec):
        t, tc = self._realize(wvec)
        f, g_t = self.inner.value_grad(tc)
        return f, self.phi.T @ (g_t * self._active(t, g_t))

    def hessian(self, wvec):
        t, tc = self._realize(wvec)
        _, g_t = self.inner.value_grad(tc)
        phi_eff = self.phi * self._active(t, g_t)[:, None]
        return phi_eff.T @ self.inner.hessian(tc) @ phi_eff

    def lipschitz(self):
        sigma = float(np.linalg.norm(self.phi, 2))
        return self.inner.lipschitz() * sigma * sigma


def _fit(objective, vclass: ValueClass, tol: float, max_iter: int):
    S, G = vclass.n_states, vclass.n_goals
    if vclass.kind == "tabular":
        res = minimize_box(objective, np.zeros(S * G), 0.0, vclass.v_max, tol=tol, max_iter=max_iter)
        v_table = res.x.reshape(S, G)
    else:
        phi = vclass.feature_map.reshape(S * G, -1)
        wrapped = _LinearRealization(objective, phi, vclass.v_max)
        res = minimize_box(
            wrapped, np.zeros(phi.shape[1]), -np.inf, np.inf, tol=tol, max_iter=max_iter
        )
        v_table = np.clip(phi @ res.x, 0.0, vclass.v_max).reshape(S, G)
    report = SolveReport(
        objective_trace=res.objective_trace,
        final_gradient_norm=res.final_gradient_norm,
        tolerance_used=tol,
        converged=res.converged,
        iterations=res.iterations,
    )
    return ValueFn(v_table, v_max=vclass.v_max), report


def fit_v_deterministic(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    vclass: ValueClass,
    gamma: float,
    tol: float = DEFAULT_FIT_TOL,
    max_iter: int = DEFAULT_FIT_MAX_ITER,
) -> tuple[ValueFn, np.ndarray, SolveReport]:
    """Fit a value function with the sample-bootstrap objective.

    Returns the fitted values, the per-record shifted advantages on the
    training records, and the solve report.
    """
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    obj = build_deterministic_objective(
        dataset, init_dataset, alpha, gamma, vclass.n_states, vclass.n_goals
    )
    v, report = _fit(obj, vclass, tol, max_iter)
    return v, u_records(dataset, v, alpha, gamma), report


def fit_v_stochastic(
    dataset: OfflineDataset,
    init_dataset: InitDataset,
    alpha: float,
    vclass: ValueClass,
    model: TransitionModel,
    gamma: float,
    tol: float = DEFAULT_FIT_TOL,
    max_iter: int = DEFAULT_FIT_MAX_ITER,
) -> tuple[ValueFn, np.ndarray, SolveReport]:
    """Fit a value function with the model-bootstrap objective."""
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    obj = build_stochastic_objective(
        dataset, init_dataset, alpha, gamma, model, vclass.n_states, vclass.n_goals
    )
    v, report = _fit(obj, vclass, tol, max_iter)
    return v, u_records_model(dataset, v, alpha, gamma, model), report
