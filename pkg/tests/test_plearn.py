"""Policy learning: weighted MLE objective, fitting, and evaluation."""
import math

import numpy as np
import pytest

from vpflow import (
    ValueFn,
    evaluate_suboptimality,
    exact_optimal_policy,
    exhaustive_dataset,
    expected_tv,
    fit_policy,
    generate_dataset,
    j_value,
    occupancy_of_policy,
    solve_regularized_primal,
    weighted_mle_objective,
)
from vpflow.data import OfflineDataset
from vpflow.generators import (
    epsilon_soft_random_policy,
    mixture_policy,
    ring_mdp,
)
from vpflow.mdp import advantage_table, evaluate_policy
from vpflow.plearn import PolicyClass, mle_logit_value_grad
from vpflow.vlearn import tabular_value_class, fit_v_deterministic

from helpers import random_instance


def _random_records(seed, S=4, G=2, A=3, n=200):
    rng = np.random.default_rng(seed)
    return OfflineDataset(
        rng.integers(0, S, n), rng.integers(0, A, n), np.zeros(n),
        rng.integers(0, S, n), rng.integers(0, G, n),
    ), rng


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def test_objective_zero_when_all_u_nonpositive():
    dataset, rng = _random_records(0)
    pol = epsilon_soft_random_policy(
        ring_mdp(4, 0.9, n_goals=2), 0.2, seed=0
    )
    u = -rng.random(dataset.n)
    assert weighted_mle_objective(dataset, u, 0.3, pol) == 0.0


def test_objective_uniform_policy_closed_form():
    S, G, A = 4, 2, 3
    dataset, rng = _random_records(1, S, G, A)
    u = rng.random(dataset.n)
    alpha = 0.4
    pclass = PolicyClass(S, G, A)
    uniform = pclass.realize(np.zeros((S, G, A)))
    got = weighted_mle_objective(dataset, u, alpha, uniform)
    want = -math.log(A) * float(np.clip(u, 0, None).sum() / alpha) / dataset.n
    # the floored-uniform policy is exactly uniform, so log pi = -log A
    assert got == pytest.approx(want, rel=1e-12)


def test_objective_matches_double_loop_oracle():
    S, G, A = 3, 2, 2
    dataset, rng = _random_records(2, S, G, A, n=150)
    u = rng.uniform(-1.0, 1.0, dataset.n)
    alpha = 0.25
    pol = epsilon_soft_random_policy(ring_mdp(4, 0.9, n_goals=2), 0.2, seed=2)
    # build a policy of the right shape
    probs = rng.dirichlet(np.ones(A), size=(S, G))
    from vpflow import Policy

    pol = Policy(probs)
    total = 0.0
    for i in range(dataset.n):
        w = max(u[i], 0.0) / alpha
        total += w * math.log(probs[dataset.s[i], dataset.g[i], dataset.a[i]])
    total /= dataset.n
    assert weighted_mle_objective(dataset, u, alpha, pol) == pytest.approx(total, abs=1e-12)


def test_objective_rejects_misaligned_lengths():
    dataset, rng = _random_records(3)
    pol = PolicyClass(4, 2, 3).realize(np.zeros((4, 2, 3)))
    with pytest.raises(ValueError):
        weighted_mle_objective(dataset, np.zeros(dataset.n + 1), 0.2, pol)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def test_fit_matches_weighted_frequency_closed_form():
    S, G, A = 4, 2, 3
    dataset, rng = _random_records(4, S, G, A, n=300)
    u = rng.uniform(0.0, 2.0, dataset.n)
    alpha = 0.5
    pclass = PolicyClass(S, G, A, epsilon_floor=1e-6)
    policy, report = fit_policy(dataset, u, alpha, pclass)
    assert report.converged
    weights = np.zeros((S, G, A))
    np.add.at(weights, (dataset.s, dataset.g, dataset.a), np.clip(u, 0, None))
    for s in range(S):
        for g in range(G):
            mass = weights[s, g].sum()
            if mass == 0.0:
                continue
            target = weights[s, g] / mass
            tv = 0.5 * np.abs(policy.probs[s, g] - target).sum()
            assert tv <= 1e-4


def test_fit_recovers_regularized_optimal_policy_from_oracle_advantages():
    mdp = ring_mdp(8, 0.9, n_goals=2)
    behavior = mixture_policy(mdp, [0.75, 0.25])
    mu = occupancy_of_policy(mdp, behavior)
    alpha = 0.2
    solution, _ = solve_regularized_primal(mdp, mu, alpha)
    dataset, _ = exhaustive_dataset(mdp, mu, scale=64, scale0=16)
    u_star = (advantage_table(mdp, solution.v_star_alpha) + alpha)[
        dataset.s, dataset.a, dataset.g
    ]
    pclass = PolicyClass(mdp.n_states, mdp.n_goals, mdp.n_actions, epsilon_floor=1e-4)
    policy, report = fit_policy(dataset, u_star, alpha, pclass)
    assert report.converged
    marg = solution.d_star_alpha.state_marginal()
    for s in range(mdp.n_states):
        for g in range(mdp.n_goals):
            if marg[s, g] <= 0.0:
                continue
            tv = 0.5 * np.abs(policy.probs[s, g] - solution.pi_star_alpha.probs[s, g]).sum()
            assert tv <= 1e-3


def test_fit_single_record_saturates_to_floor_vertex():
    S, G, A = 2, 1, 3
    dataset = OfflineDataset([0], [1], [0.0], [0], [0])
    eps = 1e-3
    pclass = PolicyClass(S, G, A, epsilon_floor=eps)
    policy, report = fit_policy(dataset, np.array([0.7]), 0.2, pclass)
    assert report.converged
    assert policy.probs[0, 0, 1] == pytest.approx(1.0 - eps * (1.0 - 1.0 / A), abs=1e-6)
    assert np.all(np.abs(policy.probs[1, 0] - 1.0 / A) < 1e-15)  # unvisited stays uniform


def test_fit_all_zero_weights_degenerate_uniform():
    dataset, _ = _random_records(5)
    pclass = PolicyClass(4, 2, 3)
    policy, report = fit_policy(dataset, -np.ones(dataset.n), 0.2, pclass)
    assert report.degenerate
    assert np.all(np.abs(policy.probs - 1.0 / 3) < 1e-15)


def test_fit_weight_scale_invariance():
    S, G, A = 3, 2, 2
    dataset, rng = _random_records(6, S, G, A, n=250)
    u = rng.uniform(0.0, 1.0, dataset.n)
    pclass = PolicyClass(S, G, A)
    base, _ = fit_policy(dataset, u, 0.5, pclass)
    for c in (0.037, 12.5):
        scaled, _ = fit_policy(dataset, c * u, 0.5, pclass)
        assert np.abs(scaled.probs - base.probs).max() <= 1e-6


def test_fit_respects_floor_exactly():
    S, G, A = 4, 2, 3
    dataset, rng = _random_records(7, S, G, A, n=400)
    u = rng.uniform(-0.5, 2.0, dataset.n)
    eps = 1e-3
    pclass = PolicyClass(S, G, A, epsilon_floor=eps)
    policy, _ = fit_policy(dataset, u, 0.3, pclass)
    assert policy.probs.min() >= eps / A


def test_logit_gradient_matches_finite_differences():
    S, G, A = 3, 2, 3
    dataset, rng = _random_records(8, S, G, A, n=200)
    u = rng.uniform(-0.5, 1.5, dataset.n)
    alpha = 0.4
    pclass = PolicyClass(S, G, A)
    h = 1e-5
    for _ in range(20):
        z = rng.uniform(-1.0, 1.0, (S, G, A))
        val, grad = mle_logit_value_grad(dataset, u, alpha, pclass, z)
        assert val == pytest.approx(
            weighted_mle_objective(dataset, u, alpha, pclass.realize(z)), rel=1e-12
        )
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            fp, _ = mle_logit_value_grad(dataset, u, alpha, pclass, zp)
            fm, _ = mle_logit_value_grad(dataset, u, alpha, pclass, zm)
            fd[idx] = (fp - fm) / (2 * h)
        denom = np.maximum(np.abs(grad), 1.0)
        assert (np.abs(fd - grad) / denom).max() <= 1e-6


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def test_evaluate_suboptimality_baselines():
    mdp, behavior, mu = random_instance(9)
    solution, _ = solve_regularized_primal(mdp, mu, 0.2)
    pi_opt, j_opt = exact_optimal_policy(mdp)
    first, _ = evaluate_suboptimality(mdp, pi_opt, solution)
    assert abs(first) <= 1e-10
    _, second = evaluate_suboptimality(mdp, solution.pi_star_alpha, solution)
    assert abs(second) <= 1e-10
    rand = epsilon_soft_random_policy(mdp, 0.5, seed=9)
    first_rand, _ = evaluate_suboptimality(mdp, rand, solution)
    assert first_rand >= -1e-12


def test_tv_transfer_bounds_performance_difference():
    mdp, behavior, mu = random_instance(10)
    alpha = 0.2
    solution, _ = solve_regularized_primal(mdp, mu, alpha)
    dataset, init, _ = generate_dataset(mdp, behavior, 3000, 3000, seed=10)
    vclass = tabular_value_class(mdp.n_states, mdp.n_goals, mdp.v_max)
    _, u_hat, _ = fit_v_deterministic(dataset, init, alpha, vclass, mdp.discount)
    pclass = PolicyClass(mdp.n_states, mdp.n_goals, mdp.n_actions)
    pi_hat, _ = fit_policy(dataset, u_hat, alpha, pclass)
    gap = j_value(mdp, solution.pi_star_alpha) - j_value(mdp, pi_hat)
    tv = expected_tv(solution.pi_star_alpha, pi_hat, solution.d_star_alpha, mdp.goal_dist)
    assert gap <= 2.0 * mdp.v_max * tv + 1e-8
