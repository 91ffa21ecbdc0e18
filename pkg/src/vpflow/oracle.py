"""Exact solver for the divergence-regularized occupancy program and its dual.

The primal maximizes  E_d[r] - alpha * D_f(d || mu)  over the flow polytope
{d >= 0, flow constraint}; the dual minimizes, over value tables in
[0, v_max], the box-constrained convex objective

    L(V) = alpha * ( (1-gamma) E_{rho,p}[V] + E_mu[ g*_+(A_V) ] ),

whose optimizer recovers the primal solution through
d = mu * (A_V + alpha)_+ / alpha. Both routes are solved independently and
the difference of their objective values is reported as a duality-gap
certificate. Everything decomposes per goal; the solvers run on the stacked
block problem with per-goal accuracy (goal weights are applied only when
reporting values).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import divergence
from .mdp import (
    GoalMdp,
    OccupancyMeasure,
    Policy,
    ValueFn,
    advantage_table,
    bellman_flow_residual,
    concentrability,
    exact_optimal_policy,
    j_value,
    occupancy_of_policy,
    policy_from_occupancy,
)
from .optim import ClampedQuadraticObjective, QuadraticObjective, minimize_box

__all__ = [
    "RegularizedSolution",
    "SolveReport",
    "dual_objective",
    "load_solution",
    "recover_occupancy",
    "regularization_bias",
    "save_solution",
    "solve_dual",
    "solve_regularized_primal",
]

DUALITY_GAP_TOL = 1e-6
STATIONARITY_TOL = 1e-8
FLOW_TOL = 1e-10


@dataclass
class SolveReport:
    """Run record for a single solve.

    ``objective_trace`` is monotone non-increasing: minimizers record their
    objective per accepted step, and the primal records the negated
    (augmented) objective of its final inner minimization.
    """

    objective_trace: list
    final_gradient_norm: float
    tolerance_used: float
    converged: bool
    iterations: int = 0
    degenerate: bool = False


@dataclass(frozen=True)
class RegularizedSolution:
    """Optimal primal/dual pair of the regularized program plus certificates."""

    d_star_alpha: OccupancyMeasure
    v_star_alpha: ValueFn
    pi_star_alpha: Policy
    primal_value: float
    dual_value: float
    duality_gap: float
    c_star_alpha: float
    iterations: int
    alpha: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "duality_gap": self.duality_gap,
            "c_star_alpha": self.c_star_alpha,
            "iterations": self.iterations,
            "v_max": self.v_star_alpha.v_max,
            "n_states": self.d_star_alpha.n_states,
            "n_actions": self.d_star_alpha.n_actions,
            "n_goals": self.d_star_alpha.n_goals,
            "d_star_alpha": self.d_star_alpha.d.ravel().tolist(),
            "v_star_alpha": self.v_star_alpha.v.ravel().tolist(),
            "pi_star_alpha": self.pi_star_alpha.probs.ravel().tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "RegularizedSolution":
        S = int(doc["n_states"])
        A = int(doc["n_actions"])
        G = int(doc["n_goals"])
        return RegularizedSolution(
            d_star_alpha=OccupancyMeasure(
                np.asarray(doc["d_star_alpha"], dtype=np.float64).reshape(S, A, G),
                flow_feasible=True,
            ),
            v_star_alpha=ValueFn(
                np.asarray(doc["v_star_alpha"], dtype=np.float64).reshape(S, G),
                v_max=float(doc["v_max"]),
            ),
            pi_star_alpha=Policy(
                np.asarray(doc["pi_star_alpha"], dtype=np.float64).reshape(S, G, A)
            ),
            primal_value=float(doc["primal_value"]),
            dual_value=float(doc["dual_value"]),
            duality_gap=float(doc["duality_gap"]),
            c_star_alpha=float(doc["c_star_alpha"]),
            iterations=int(doc["iterations"]),
            alpha=float(doc["alpha"]),
        )


# ---------------------------------------------------------------------------
# shared assembly
# ---------------------------------------------------------------------------


def _check_inputs(mdp: GoalMdp, mu: OccupancyMeasure, alpha: float) -> None:
    if mu.d.shape != (mdp.n_states, mdp.n_actions, mdp.n_goals):
        raise ValueError("behavior occupancy shape does not match the MDP")
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    if mu.d.min() <= 0.0:
        raise ValueError("behavior occupancy must be strictly positive everywhere")
    resid = np.abs(bellman_flow_residual(mdp, mu)).max()
    if resid > 1e-8:
        raise ValueError(f"behavior occupancy is not flow feasible (residual {resid:.3e})")


def _flow_matrix(mdp: GoalMdp) -> np.ndarray:
    """B with (B d)(s) = sum_a d(s,a) - gamma sum_{s',a'} P(s|s',a') d(s',a')."""
    S, A = mdp.n_states, mdp.n_actions
    B = -mdp.discount * mdp.transition.reshape(S * A, S).T  # (S, S*A)
    for s in range(S):
        B[s, s * A : (s + 1) * A] += 1.0
    return B


def _bootstrap_matrix(mdp: GoalMdp) -> np.ndarray:
    """M with (M v)(s,a) = gamma * E_{s'|s,a} v(s') - v(s); shape (S*A, S)."""
    S, A = mdp.n_states, mdp.n_actions
    M = mdp.discount * mdp.transition.reshape(S * A, S).copy()
    for s in range(S):
        M[s * A : (s + 1) * A, s] -= 1.0
    return M


def _block_diag(block: np.ndarray, count: int) -> np.ndarray:
    rows, cols = block.shape
    out = np.zeros((rows * count, cols * count))
    for k in range(count):
        out[k * rows : (k + 1) * rows, k * cols : (k + 1) * cols] = block
    return out


def _mu_blocks(mdp: GoalMdp, mu: OccupancyMeasure) -> np.ndarray:
    """Per-goal behavior tables flattened g-major: (G * S * A,)."""
    return np.transpose(mu.d, (2, 0, 1)).reshape(-1)


def _reward_blocks(mdp: GoalMdp) -> np.ndarray:
    """Reward per (g, s, a) row, g-major flat."""
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    return np.repeat(mdp.reward.T.reshape(G, S), A, axis=1).reshape(-1)


# ---------------------------------------------------------------------------
# dual route
# ---------------------------------------------------------------------------


def dual_objective(mdp: GoalMdp, mu: OccupancyMeasure, alpha: float, v: ValueFn) -> float:
    """Population dual objective in the alpha-scaled form."""
    _check_inputs(mdp, mu, alpha)
    spec = divergence.ChiSquareSpec(alpha)
    adv = advantage_table(mdp, v)
    init_term = (1.0 - mdp.discount) * float(
        np.einsum("s,g,sg->", mdp.init_dist, mdp.goal_dist, v.v)
    )
    conj_term = float(
        np.einsum("sag,g,sag->", mu.d, mdp.goal_dist, divergence.g_conjugate_plus(spec, adv))
    )
    return alpha * (init_term + conj_term)


def _dual_objective_blocks(mdp: GoalMdp, mu: OccupancyMeasure, alpha: float):
    """Stacked per-goal dual objective, unweighted by the goal distribution."""
    G = mdp.n_goals
    M = _block_diag(_bootstrap_matrix(mdp), G)
    lin = np.tile(alpha * (1.0 - mdp.discount) * mdp.init_dist, G)
    w = _mu_blocks(mdp, mu)
    c = _reward_blocks(mdp) + alpha
    return ClampedQuadraticObjective(lin=lin, w=w, c=c, M=M)


def solve_dual(
    mdp: GoalMdp,
    mu: OccupancyMeasure,
    alpha: float,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    v_max: float | None = None,
) -> tuple[ValueFn, SolveReport]:
    """Minimize the dual objective over the box [0, v_max]^(S x G).

    The objective is convex (a nondecreasing convex clamp of an affine map
    plus a linear term), so the returned point is a global minimum whenever
    the gradient-mapping tolerance is met.
    """
    _check_inputs(mdp, mu, alpha)
    if v_max is None:
        v_max = mdp.v_max
    S, G = mdp.n_states, mdp.n_goals
    obj = _dual_objective_blocks(mdp, mu, alpha)
    res = minimize_box(obj, np.zeros(S * G), 0.0, v_max, tol=tol, max_iter=max_iter)
    v = ValueFn(res.x.reshape(G, S).T, v_max=v_max)
    report = SolveReport(
        objective_trace=res.objective_trace,
        final_gradient_norm=res.final_gradient_norm,
        tolerance_used=tol,
        converged=res.converged,
        iterations=res.iterations,
    )
    return v, report


def recover_occupancy(
    mdp: GoalMdp, mu: OccupancyMeasure, alpha: float, v: ValueFn
) -> OccupancyMeasure:
    """Map a dual point to a candidate occupancy: d = mu * (A_V + alpha)_+ / alpha.

    No renormalization is applied; the result is flow feasible exactly when
    v solves the dual.
    """
    _check_inputs(mdp, mu, alpha)
    shifted = advantage_table(mdp, v) + alpha
    return OccupancyMeasure(mu.d * np.clip(shifted, 0.0, None) / alpha, flow_feasible=False)


# ---------------------------------------------------------------------------
# primal route: augmented Lagrangian + active-set polish
# ---------------------------------------------------------------------------


def _primal_values(mdp: GoalMdp, mu: OccupancyMeasure, alpha: float, d: np.ndarray) -> float:
    """Goal-weighted primal objective at the occupancy table d (S, A, G)."""
    reward_term = np.einsum("sag,sg,g->", d, mdp.reward, mdp.goal_dist)
    ratio = d / mu.d
    div_term = np.einsum("sag,g,sag->", mu.d, mdp.goal_dist, 0.5 * (ratio - 1.0) ** 2)
    return float(reward_term - alpha * div_term)


def _polish_active_set(Q0, q0, Bj, bj, x, max_rounds: int = 60):
    """Solve the equality-constrained KKT system on the active set guessed
    from x, swapping constraints until primal/dual feasibility holds."""
    n = x.size
    active = x <= 1e-9
    for _ in range(max_rounds):
        free = ~active
        nf = int(free.sum())
        Bf = Bj[:, free]
        kkt = np.zeros((nf + Bj.shape[0], nf + Bj.shape[0]))
        kkt[:nf, :nf] = Q0[np.ix_(free, free)]
        kkt[:nf, nf:] = Bf.T
        kkt[nf:, :nf] = Bf
        rhs = np.concatenate([-q0[free], bj])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        xf = sol[:nf]
        nu = sol[nf:]
        cand = np.zeros(n)
        cand[free] = xf
        mult = Q0 @ cand + q0 + Bj.T @ nu  # bound multipliers on active coords
        neg_prim = free & (cand < -1e-11)
        neg_dual = active & (mult < -1e-10)
        if not neg_prim.any() and not neg_dual.any():
            return np.clip(cand, 0.0, None), nu, True
        active = active | neg_prim
        active = active & ~neg_dual
    return x, None, False


def solve_regularized_primal(
    mdp: GoalMdp,
    mu: OccupancyMeasure,
    alpha: float,
    flow_tol: float = FLOW_TOL,
    max_outer: int = 30,
    inner_tol: float = 1e-11,
    inner_max_iter: int = 20_000,
    dual_tol: float = 1e-10,
) -> tuple[RegularizedSolution, SolveReport]:
    """Solve the regularized program by two independent routes.

    The primal runs an augmented-Lagrangian loop (projected-gradient/Newton
    inner solves over {d >= 0}) followed by an active-set polish of the
    original KKT system; the dual is solved separately and the value gap is
    reported as the duality-gap certificate.
    """
    _check_inputs(mdp, mu, alpha)
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    n = S * A * G

    mu_flat = _mu_blocks(mdp, mu)
    r_flat = _reward_blocks(mdp)
    Bj = _block_diag(_flow_matrix(mdp), G)
    bj = np.tile((1.0 - mdp.discount) * mdp.init_dist, G)
    Q0 = np.diag(alpha / mu_flat)
    q0 = -(r_flat + alpha)
    c00 = 0.5 * alpha * G  # sum_g (alpha/2) sum mu_g, each goal slice sums to 1
    BtB = Bj.T @ Bj

    lam = np.zeros(S * G)
    rho = 100.0 * max(1.0, alpha * float((1.0 / mu_flat).max()))
    x = mu_flat.copy()
    total_iters = 0
    inner_res = None
    prev_resid = np.inf
    flow_ok = False
    for _ in range(max_outer):
        Q_in = Q0 + rho * BtB
        q_in = q0 + Bj.T @ (lam - rho * bj)
        c_in = c00 - float(lam @ bj) + 0.5 * rho * float(bj @ bj)
        inner = QuadraticObjective(Q_in, q_in, c_in)
        inner_res = minimize_box(inner, x, 0.0, np.inf, tol=inner_tol, max_iter=inner_max_iter)
        x = inner_res.x
        total_iters += inner_res.iterations
        resid = Bj @ x - bj
        resid_norm = float(np.abs(resid).max())
        if resid_norm <= flow_tol:
            flow_ok = True
            break
        lam = lam + rho * resid
        if resid_norm > 0.25 * prev_resid:
            rho *= 10.0
        prev_resid = resid_norm

    x_pol, nu, polished = _polish_active_set(Q0, q0, Bj, bj, x)
    if polished and np.abs(Bj @ x_pol - bj).max() <= flow_tol:
        x = x_pol
        flow_ok = True
        stat = Q0 @ x + q0 + Bj.T @ nu
        stat_norm = float(max(np.abs(stat[x > 1e-9]).max(initial=0.0), -stat.min(initial=0.0)))
    else:
        stat_norm = inner_res.final_gradient_norm if inner_res is not None else np.inf

    d_table = np.transpose(x.reshape(G, S, A), (1, 2, 0))
    d_star = OccupancyMeasure(d_table, flow_feasible=True)
    primal_value = _primal_values(mdp, mu, alpha, d_star.d)

    v_star, dual_report = solve_dual(mdp, mu, alpha, tol=dual_tol)
    # The branch-restricted conjugate recenters g* by its minimum -alpha/2,
    # so the Lagrangian dual value is the recentered objective minus alpha/2.
    dual_value = dual_objective(mdp, mu, alpha, v_star) / alpha - 0.5 * alpha

    pi_star = policy_from_occupancy(d_star, mdp.n_actions)
    c_star = concentrability(occupancy_of_policy(mdp, pi_star), mu, mdp.goal_dist)

    solution = RegularizedSolution(
        d_star_alpha=d_star,
        v_star_alpha=v_star,
        pi_star_alpha=pi_star,
        primal_value=primal_value,
        dual_value=dual_value,
        duality_gap=dual_value - primal_value,
        c_star_alpha=c_star,
        iterations=total_iters + dual_report.iterations,
        alpha=alpha,
    )
    report = SolveReport(
        objective_trace=inner_res.objective_trace if inner_res is not None else [],
        final_gradient_norm=stat_norm,
        tolerance_used=flow_tol,
        converged=bool(flow_ok and stat_norm <= STATIONARITY_TOL and dual_report.converged),
        iterations=total_iters,
    )
    return solution, report


def regularization_bias(mdp: GoalMdp, mu: OccupancyMeasure, alpha: float) -> tuple[float, float]:
    """Bias of the regularized optimum and its coverage-based bound.

    Returns (J(pi*) - J(pi_alpha*), alpha * C_alpha*^2 / 2); the first
    component never exceeds the second beyond solver noise.
    """
    solution, _ = solve_regularized_primal(mdp, mu, alpha)
    _, j_opt = exact_optimal_policy(mdp)
    gap = j_opt - j_value(mdp, solution.pi_star_alpha)
    bound = 0.5 * alpha * solution.c_star_alpha**2
    return gap, bound


def save_solution(solution: RegularizedSolution, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(solution.to_dict(), fh, indent=1)
        fh.write("\n")


def load_solution(path: str) -> RegularizedSolution:
    with open(path, "r", encoding="utf-8") as fh:
        return RegularizedSolution.from_dict(json.load(fh))
