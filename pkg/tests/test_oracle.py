"""Regularized-program oracle: both routes, certificates, and inequalities."""
import numpy as np
import pytest

from vpflow import (
    ChiSquareSpec,
    GoalMdp,
    OccupancyMeasure,
    ValueFn,
    dual_objective,
    g_conjugate,
    g_conjugate_prime,
    occupancy_of_policy,
    recover_occupancy,
    regularization_bias,
    solve_dual,
    solve_regularized_primal,
)
from vpflow.mdp import advantage_table, bellman_flow_residual
from vpflow.oracle import load_solution, save_solution
from vpflow.generators import random_mdp

from helpers import criterion_instances, random_instance
from qp_oracle import regularized_primal_reference


# ---------------------------------------------------------------------------
# primal route
# ---------------------------------------------------------------------------


def test_primal_single_state_returns_behavior():
    mdp, _, mu = random_instance(0, n_states=1, n_actions=3, n_goals=2, gamma=0.7)
    for alpha in (0.05, 1.0):
        solution, report = solve_regularized_primal(mdp, mu, alpha)
        assert report.converged
        assert np.abs(solution.d_star_alpha.d - mu.d).max() <= 1e-9


def test_primal_huge_alpha_returns_behavior():
    mdp, _, mu = random_instance(1)
    solution, _ = solve_regularized_primal(mdp, mu, 1e6)
    assert np.abs(solution.d_star_alpha.d - mu.d).max() <= 1e-4


def test_primal_matches_independent_active_set_qp():
    mdp, _, mu = random_instance(2, n_states=5, n_actions=2, n_goals=2, gamma=0.9)
    alpha = 0.2
    solution, _ = solve_regularized_primal(mdp, mu, alpha)
    d_ref, value_ref = regularized_primal_reference(mdp, mu, alpha)
    assert abs(solution.primal_value - value_ref) <= 1e-7
    assert np.abs(solution.d_star_alpha.d - d_ref).max() <= 1e-7


def test_primal_rejects_degenerate_behavior():
    mdp, _, mu = random_instance(3)
    hole = np.array(mu.d, copy=True)
    hole[0, 0, 0] = 0.0
    with pytest.raises(ValueError):
        solve_regularized_primal(mdp, OccupancyMeasure(hole), 0.1)
    not_flow = OccupancyMeasure(np.full_like(mu.d, 1.0 / (mu.d.shape[0] * mu.d.shape[1])))
    try:
        solve_regularized_primal(mdp, not_flow, 0.1)
    except ValueError:
        pass
    else:  # a uniform table is flow feasible only for special dynamics
        assert np.abs(bellman_flow_residual(mdp, not_flow)).max() <= 1e-8


def test_primal_report_trace_monotone():
    mdp, _, mu = random_instance(4)
    _, report = solve_regularized_primal(mdp, mu, 0.1)
    trace = np.asarray(report.objective_trace)
    assert trace.size >= 1
    assert np.all(np.diff(trace) <= 1e-10)


# ---------------------------------------------------------------------------
# dual objective
# ---------------------------------------------------------------------------


def test_dual_objective_at_zero_value():
    mdp, _, mu = random_instance(5)
    alpha = 0.3
    v0 = ValueFn(np.zeros((mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
    got = dual_objective(mdp, mu, alpha, v0)
    r = mdp.reward[:, None, :]
    want = 0.5 * float(np.einsum("sag,g,sag->", mu.d, mdp.goal_dist, (r + alpha) ** 2))
    assert got == pytest.approx(want, rel=1e-12)


def test_dual_objective_zero_value_zero_reward():
    mdp, _, mu = random_instance(6)
    zero_r = GoalMdp(
        mdp.n_states, mdp.n_actions, mdp.n_goals, mdp.transition,
        np.zeros_like(mdp.reward), mdp.init_dist, mdp.goal_dist, mdp.discount,
    )
    alpha = 0.4
    v0 = ValueFn(np.zeros((mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
    assert dual_objective(zero_r, mu, alpha, v0) == pytest.approx(alpha**2 / 2, rel=1e-12)


def test_dual_objective_matches_indicator_form_summation():
    mdp, _, mu = random_instance(7)
    rng = np.random.default_rng(7)
    alpha = 0.25
    spec = ChiSquareSpec(alpha)
    v = ValueFn(rng.uniform(0.0, mdp.v_max, (mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
    adv = advantage_table(mdp, v)
    total = (1.0 - mdp.discount) * float(
        np.einsum("s,g,sg->", mdp.init_dist, mdp.goal_dist, v.v)
    )
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for g in range(mdp.n_goals):
                x = adv[s, a, g]
                indicator = 1.0 if g_conjugate_prime(spec, x) >= 0.0 else 0.0
                gbar = float(g_conjugate(spec, x)) + alpha / 2.0
                total += mdp.goal_dist[g] * mu.d[s, a, g] * indicator * gbar
    assert dual_objective(mdp, mu, alpha, v) == pytest.approx(alpha * total, rel=1e-11)


# ---------------------------------------------------------------------------
# dual route and primal-dual consistency
# ---------------------------------------------------------------------------


def test_dual_recovery_and_gap_certificates():
    mdp, _, mu = random_instance(8)
    alpha = 0.15
    solution, _ = solve_regularized_primal(mdp, mu, alpha)
    recovered = recover_occupancy(mdp, mu, alpha, solution.v_star_alpha)
    assert np.abs(recovered.d - solution.d_star_alpha.d).max() <= 1e-5
    assert np.abs(bellman_flow_residual(mdp, recovered)).max() <= 1e-5
    # strong duality with the recentering constant folded back in
    assert abs(solution.dual_value - solution.primal_value) <= 1e-6
    assert solution.duality_gap >= -1e-9


def test_dual_huge_alpha_ratio_is_one():
    mdp, _, mu = random_instance(9)
    alpha = 1e6
    v, report = solve_dual(mdp, mu, alpha)
    assert report.converged
    ratio = np.clip(advantage_table(mdp, v) + alpha, 0.0, None) / alpha
    assert np.abs(ratio - 1.0).max() <= 1e-4


def test_recover_occupancy_clips_to_zero():
    mdp, _, mu = random_instance(10, gamma=0.0)
    zero_r = GoalMdp(
        mdp.n_states, mdp.n_actions, mdp.n_goals, mdp.transition,
        np.zeros_like(mdp.reward), mdp.init_dist, mdp.goal_dist, 0.0,
    )
    v = ValueFn(np.ones((mdp.n_states, mdp.n_goals)), v_max=zero_r.v_max)
    rec = recover_occupancy(zero_r, mu, 0.5, v)  # advantage == -1 <= -alpha
    assert np.all(rec.d == 0.0)


def test_recover_occupancy_identity_at_zero_advantage():
    mdp, _, mu = random_instance(11, gamma=0.0)
    v = ValueFn(mdp.reward.copy(), v_max=mdp.v_max)  # gamma=0: advantage == 0
    rec = recover_occupancy(mdp, mu, 0.7, v)
    assert np.abs(rec.d - mu.d).max() <= 1e-12


# ---------------------------------------------------------------------------
# regularization bias
# ---------------------------------------------------------------------------


def test_regularization_bias_single_state_zero_gap():
    mdp, _, mu = random_instance(12, n_states=1, n_actions=2, n_goals=1, gamma=0.6)
    gap, bound = regularization_bias(mdp, mu, 0.2)
    assert abs(gap) <= 1e-10
    assert gap <= bound + 1e-8


def test_regularization_bias_monotone_toward_zero():
    mdp, _, mu = random_instance(13, n_states=4, n_actions=2, n_goals=2, gamma=0.9)
    gaps = [regularization_bias(mdp, mu, a)[0] for a in (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)]
    for lo, hi in zip(gaps[1:], gaps[:-1]):
        assert lo <= hi + 1e-9
    assert gaps[-1] <= max(0.1 * gaps[0], 1e-6)


def test_regularization_bias_explicit_constant():
    mdp, _, mu = random_instance(14)
    gap, bound = regularization_bias(mdp, mu, 0.1)
    assert gap <= bound + 1e-8


# ---------------------------------------------------------------------------
# convexity inequalities of the dual objective
# ---------------------------------------------------------------------------


def _dual_gradient(mdp, mu, alpha, v):
    """Analytic gradient of the alpha-scaled dual objective over the table."""
    u_plus = np.clip(advantage_table(mdp, v) + alpha, 0.0, None)
    weighted = mu.d * mdp.goal_dist[None, None, :] * u_plus  # (S, A, G)
    inflow = np.einsum("sat,sag->tg", mdp.transition, weighted)
    lin = alpha * (1.0 - mdp.discount) * np.outer(mdp.init_dist, mdp.goal_dist)
    return lin + mdp.discount * inflow - weighted.sum(axis=1)


def _mu_norm_sq(mdp, mu, table):
    return float(np.einsum("sag,g,sag->", mu.d, mdp.goal_dist, table**2))


def test_positive_semi_strong_convexity_inequality():
    mdp, _, mu = random_instance(15)
    rng = np.random.default_rng(15)
    alpha = 0.2
    for _ in range(100):
        va = ValueFn(rng.uniform(0, mdp.v_max, (mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
        vb = ValueFn(rng.uniform(0, mdp.v_max, (mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
        ua = np.clip(advantage_table(mdp, va) + alpha, 0.0, None)
        ub = np.clip(advantage_table(mdp, vb) + alpha, 0.0, None)
        lhs = dual_objective(mdp, mu, alpha, va) - dual_objective(mdp, mu, alpha, vb)
        inner = float(np.sum(_dual_gradient(mdp, mu, alpha, vb) * (va.v - vb.v)))
        rhs = inner + 0.5 * _mu_norm_sq(mdp, mu, ua - ub)
        assert lhs >= rhs - 1e-9


def test_semi_strong_optimality_consequence():
    mdp, _, mu = random_instance(16)
    rng = np.random.default_rng(16)
    alpha = 0.3
    v_star, report = solve_dual(mdp, mu, alpha)
    assert report.converged
    l_star = dual_objective(mdp, mu, alpha, v_star)
    u_star = np.clip(advantage_table(mdp, v_star) + alpha, 0.0, None)
    for _ in range(50):
        v = ValueFn(rng.uniform(0, mdp.v_max, (mdp.n_states, mdp.n_goals)), v_max=mdp.v_max)
        u = np.clip(advantage_table(mdp, v) + alpha, 0.0, None)
        gap = dual_objective(mdp, mu, alpha, v) - l_star
        assert _mu_norm_sq(mdp, mu, u - u_star) <= 2.0 * gap + 1e-8


# ---------------------------------------------------------------------------
# batch certificates on the acceptance instance family
# ---------------------------------------------------------------------------


def test_duality_and_recovery_on_random_family():
    for mdp, _, mu in criterion_instances(8):
        for alpha in (0.05, 1.0):
            solution, report = solve_regularized_primal(mdp, mu, alpha)
            assert report.converged
            assert solution.duality_gap <= 1e-6
            assert solution.duality_gap >= -1e-9
            rec = recover_occupancy(mdp, mu, alpha, solution.v_star_alpha)
            assert np.abs(rec.d - solution.d_star_alpha.d).max() <= 1e-5


def test_solution_serialization_round_trip(tmp_path):
    mdp, _, mu = random_instance(17)
    solution, _ = solve_regularized_primal(mdp, mu, 0.2)
    path = str(tmp_path / "sol.json")
    save_solution(solution, path)
    back = load_solution(path)
    assert np.array_equal(back.d_star_alpha.d, solution.d_star_alpha.d)
    assert np.array_equal(back.v_star_alpha.v, solution.v_star_alpha.v)
    assert np.array_equal(back.pi_star_alpha.probs, solution.pi_star_alpha.probs)
    assert back.primal_value == solution.primal_value
    assert back.duality_gap == solution.duality_gap
