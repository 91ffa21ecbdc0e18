"""Synthetic goal-conditioned MDP instances and behavior policies.

The experiment vehicles are small synthetic environments: deterministic and
noisy gridworlds, random chains, shift rings, and dense random instances.
Gridworld and chain goals are designated states with reward 1 at the goal
and 0 elsewhere; every goal state admits a self-loop action (moving into a
wall stays put), so optimal behavior is absorbing at the goal. Initial
distributions are uniform over all states, which together with strictly
positive behavior policies keeps every behavior occupancy strictly positive.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .mdp import GoalMdp, Policy

__all__ = [
    "epsilon_soft_random_policy",
    "gridworld",
    "mixture_policy",
    "random_chain",
    "random_mdp",
    "ring_mdp",
    "shortest_path_behavior",
    "uniform_policy",
]

GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def gridworld(
    width: int,
    height: int,
    discount: float,
    p_slip: float = 0.0,
    goals: list[int] | None = None,
) -> GoalMdp:
    """Rectangular gridworld; moving into a wall stays put.

    With p_slip > 0 the taken move is the intended one with probability
    1 - p_slip and a uniformly random one otherwise. Goals default to the
    corner cells.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    if not (0.0 <= p_slip <= 1.0):
        raise ValueError("p_slip must lie in [0, 1]")
    S = width * height
    A = len(GRID_MOVES)
    det = np.zeros((S, A, S))
    for row in range(height):
        for col in range(width):
            s = row * width + col
            for a, (dr, dc) in enumerate(GRID_MOVES):
                nr = min(max(row + dr, 0), height - 1)
                nc = min(max(col + dc, 0), width - 1)
                det[s, a, nr * width + nc] = 1.0
    if p_slip == 0.0:
        P = det
    else:
        P = (1.0 - p_slip) * det + p_slip * det.mean(axis=1, keepdims=True)
    if goals is None:
        corners = [0, width - 1, (height - 1) * width, S - 1]
        goals = sorted(set(corners))
    return _goal_reward_mdp(P, goals, discount)


def random_chain(n_states: int, discount: float, seed: int) -> GoalMdp:
    """Chain with random local transitions; both endpoints are goals.

    Each (state, action) distributes its mass over {left, stay, right}
    (folded at the ends) with seeded random weights, action 0 biased left
    and action 1 biased right. All reachable-neighbor entries are positive.
    """
    if n_states < 2:
        raise ValueError("chain needs at least two states")
    rng = np.random.default_rng(seed)
    bias = (np.array([6.0, 2.0, 1.0]), np.array([1.0, 2.0, 6.0]))
    P = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        for a in range(2):
            w = rng.dirichlet(bias[a])
            for offset, mass in zip((-1, 0, 1), w):
                P[s, a, min(max(s + offset, 0), n_states - 1)] += mass
    return _goal_reward_mdp(P, [0, n_states - 1], discount)


def ring_mdp(
    n_states: int, discount: float, n_goals: int = 1, shifts: tuple[int, ...] = (1, 2)
) -> GoalMdp:
    """Deterministic cyclic shifts; one action per shift.

    Under any state-independent policy the state occupancy is exactly
    uniform, so behavior occupancies built that way have exactly rational
    entries: the instance of choice for exhaustive-dataset work.
    """
    if n_states < max(shifts) + 1:
        raise ValueError("ring too small for the requested shifts")
    A = len(shifts)
    P = np.zeros((n_states, A, n_states))
    for s in range(n_states):
        for a, k in enumerate(shifts):
            P[s, a, (s + k) % n_states] = 1.0
    goals = [round(i * n_states / n_goals) % n_states for i in range(n_goals)]
    if len(set(goals)) != n_goals:
        raise ValueError("too many goals for the ring size")
    return _goal_reward_mdp(P, goals, discount)


def random_mdp(
    n_states: int, n_actions: int, n_goals: int, discount: float, seed: int
) -> GoalMdp:
    """Dense random instance: strictly positive transitions, uniform rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.random((n_states, n_goals))
    rho = rng.dirichlet(5.0 * np.ones(n_states))
    p = rng.dirichlet(5.0 * np.ones(n_goals))
    return GoalMdp(
        n_states=n_states,
        n_actions=n_actions,
        n_goals=n_goals,
        transition=P,
        reward=reward,
        init_dist=rho,
        goal_dist=p,
        discount=discount,
    )


def _goal_reward_mdp(P: np.ndarray, goal_states: list[int], discount: float) -> GoalMdp:
    S, A, _ = P.shape
    G = len(goal_states)
    reward = np.zeros((S, G))
    for g, gs in enumerate(goal_states):
        reward[gs, g] = 1.0
    return GoalMdp(
        n_states=S,
        n_actions=A,
        n_goals=G,
        transition=P,
        reward=reward,
        init_dist=np.full(S, 1.0 / S),
        goal_dist=np.full(G, 1.0 / G),
        discount=discount,
    )


# ---------------------------------------------------------------------------
# behavior policies
# ---------------------------------------------------------------------------


def uniform_policy(mdp: GoalMdp) -> Policy:
    shape = (mdp.n_states, mdp.n_goals, mdp.n_actions)
    return Policy(np.full(shape, 1.0 / mdp.n_actions))


def mixture_policy(mdp: GoalMdp, action_probs) -> Policy:
    """State-independent policy; accepts one distribution or one per goal."""
    probs = np.asarray(action_probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = np.tile(probs, (mdp.n_goals, 1))
    if probs.shape != (mdp.n_goals, mdp.n_actions):
        raise ValueError("action_probs must be (A,) or (G, A)")
    table = np.broadcast_to(probs[None, :, :], (mdp.n_states, mdp.n_goals, mdp.n_actions))
    return Policy(table.copy())


def epsilon_soft_random_policy(mdp: GoalMdp, epsilon: float, seed: int) -> Policy:
    """Random policy mixed with uniform so every action has mass >= eps/|A|."""
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.ones(mdp.n_actions), size=(mdp.n_states, mdp.n_goals))
    return Policy((1.0 - epsilon) * base + epsilon / mdp.n_actions)


def shortest_path_behavior(mdp: GoalMdp, epsilon: float = 0.3) -> Policy:
    """Epsilon-greedy on a shortest-path heuristic toward each goal.

    Distances are breadth-first hops on the most-likely-transition graph to
    the highest-reward state of each goal; the greedy action minimizes the
    distance of its most likely successor, ties toward the lowest index.
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must lie in (0, 1]")
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    nxt = np.argmax(mdp.transition, axis=2)  # (S, A)
    probs = np.full((S, G, A), epsilon / A)
    for g in range(G):
        goal_state = int(np.argmax(mdp.reward[:, g]))
        dist = _bfs_distances(nxt, goal_state)
        for s in range(S):
            greedy = int(np.argmin(dist[nxt[s]]))
            probs[s, g, greedy] += 1.0 - epsilon
    return Policy(probs)


def _bfs_distances(nxt: np.ndarray, target: int) -> np.ndarray:
    S = nxt.shape[0]
    back = [[] for _ in range(S)]
    for s in range(S):
        for t in set(int(x) for x in nxt[s]):
            back[t].append(s)
    dist = np.full(S, np.inf)
    dist[target] = 0.0
    queue = deque([target])
    while queue:
        t = queue.popleft()
        for s in back[t]:
            if dist[s] == np.inf:
                dist[s] = dist[t] + 1.0
                queue.append(s)
    return dist
