"""Shared instance builders and analytic formulas for the test suite."""
import numpy as np

from vpflow import occupancy_of_policy
from vpflow.generators import epsilon_soft_random_policy, random_mdp
from vpflow.mdp import advantage_table


def random_instance(seed, n_states=5, n_actions=2, n_goals=2, gamma=0.9, eps=0.2):
    """Random MDP plus a strictly positive behavior policy and its occupancy."""
    mdp = random_mdp(n_states, n_actions, n_goals, gamma, seed=seed)
    behavior = epsilon_soft_random_policy(mdp, eps, seed=seed + 10_000)
    mu = occupancy_of_policy(mdp, behavior)
    return mdp, behavior, mu


def criterion_instances(count=20):
    """The random-instance family used by the acceptance suite:
    |S| <= 6, |A| <= 3, |G| <= 2, gamma in {0.5, 0.9}."""
    out = []
    for seed in range(count):
        rng = np.random.default_rng(1000 + seed)
        S = int(rng.integers(3, 7))
        A = int(rng.integers(2, 4))
        G = int(rng.integers(1, 3))
        gamma = float(rng.choice([0.5, 0.9]))
        out.append(random_instance(seed, S, A, G, gamma))
    return out


def dual_gradient(mdp, mu, alpha, v):
    """Analytic gradient of the alpha-scaled dual objective over the value
    table, derived by hand from the clamp-squared form."""
    u_plus = np.clip(advantage_table(mdp, v) + alpha, 0.0, None)
    weighted = mu.d * mdp.goal_dist[None, None, :] * u_plus
    inflow = np.einsum("sat,sag->tg", mdp.transition, weighted)
    lin = alpha * (1.0 - mdp.discount) * np.outer(mdp.init_dist, mdp.goal_dist)
    return lin + mdp.discount * inflow - weighted.sum(axis=1)


def mu_norm_sq(mdp, mu, table):
    """Squared 2-norm weighted by the joint behavior distribution."""
    return float(np.einsum("sag,g,sag->", mu.d, mdp.goal_dist, table**2))
