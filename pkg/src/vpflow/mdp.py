"""Goal-conditioned finite MDPs: exact evaluation, occupancies, and coverage.

Array conventions (float64 throughout):
  transition  P[s, a, s']   (S, A, S)   shared across goals
  reward      r[s, g]       (S, G)      state reward, action independent, in [0, 1]
  policy      pi[s, g, a]   (S, G, A)
  occupancy   d[s, a, g]    (S, A, G)   normalized per goal when flow feasible
  value       v[s, g]       (S, G)

The discounted occupancy of a policy satisfies, per goal g and state s,

    sum_a d(s,a;g) = (1-gamma) rho(s) + gamma sum_{s',a'} P(s|s',a') d(s',a';g),

and occupancies are computed by solving that linear system directly rather
than by iteration, which is exact at the problem sizes handled here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

PROB_ATOL = 1e-12
FLOW_ATOL = 1e-10

__all__ = [
    "GoalMdp",
    "Policy",
    "OccupancyMeasure",
    "ValueFn",
    "ShiftedAdvantage",
    "advantage_table",
    "bellman_flow_residual",
    "build_shifted_advantage",
    "concentrability",
    "evaluate_policy",
    "exact_optimal_policy",
    "j_value",
    "load_mdp",
    "load_occupancy",
    "load_policy",
    "occupancy_of_policy",
    "policy_from_occupancy",
    "save_mdp",
    "save_occupancy",
    "save_policy",
]


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def _check_dist(vec: np.ndarray, name: str, atol: float = PROB_ATOL) -> None:
    if np.any(vec < -atol):
        raise ValueError(f"{name} has negative entries")
    if abs(float(vec.sum()) - 1.0) > atol:
        raise ValueError(f"{name} does not sum to 1 (got {vec.sum()!r})")


@dataclass(frozen=True)
class GoalMdp:
    """Finite goal-conditioned MDP with dynamics shared across goals.

    ``deterministic`` may be left as None, in which case it is derived from
    the transition table (every row an exact point mass). If given, it must
    match the table.
    """

    n_states: int
    n_actions: int
    n_goals: int
    transition: np.ndarray
    reward: np.ndarray
    init_dist: np.ndarray
    goal_dist: np.ndarray
    discount: float
    deterministic: Optional[bool] = None

    def __post_init__(self):
        S, A, G = self.n_states, self.n_actions, self.n_goals
        if min(S, A, G) < 1:
            raise ValueError("state, action and goal counts must be positive")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        P = _freeze(self.transition)
        r = _freeze(self.reward)
        rho = _freeze(self.init_dist)
        p = _freeze(self.goal_dist)
        if P.shape != (S, A, S):
            raise ValueError(f"transition shape {P.shape} != {(S, A, S)}")
        if r.shape != (S, G):
            raise ValueError(f"reward shape {r.shape} != {(S, G)}")
        if rho.shape != (S,):
            raise ValueError(f"init_dist shape {rho.shape} != {(S,)}")
        if p.shape != (G,):
            raise ValueError(f"goal_dist shape {p.shape} != {(G,)}")
        if np.any(P < -PROB_ATOL):
            raise ValueError("transition has negative entries")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > PROB_ATOL:
            raise ValueError(f"transition rows do not sum to 1 (max err {row_err:.3e})")
        _check_dist(rho, "init_dist")
        _check_dist(p, "goal_dist")
        if np.any(r < -PROB_ATOL) or np.any(r > 1.0 + PROB_ATOL):
            raise ValueError("rewards must lie in [0, 1]")
        derived = bool(np.all((P == 0.0) | (P == 1.0)))
        if self.deterministic is None:
            object.__setattr__(self, "deterministic", derived)
        elif bool(self.deterministic) != derived:
            raise ValueError("deterministic flag does not match the transition table")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "init_dist", rho)
        object.__setattr__(self, "goal_dist", p)

    @property
    def v_max(self) -> float:
        """Default value bound 1/(1-gamma) for rewards in [0, 1]."""
        return 1.0 / (1.0 - self.discount)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_goals": self.n_goals,
            "discount": self.discount,
            "deterministic": bool(self.deterministic),
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "init_dist": self.init_dist.tolist(),
            "goal_dist": self.goal_dist.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "GoalMdp":
        S = int(doc["n_states"])
        A = int(doc["n_actions"])
        G = int(doc["n_goals"])
        return GoalMdp(
            n_states=S,
            n_actions=A,
            n_goals=G,
            transition=np.asarray(doc["transition"], dtype=np.float64).reshape(S, A, S),
            reward=np.asarray(doc["reward"], dtype=np.float64).reshape(S, G),
            init_dist=np.asarray(doc["init_dist"], dtype=np.float64),
            goal_dist=np.asarray(doc["goal_dist"], dtype=np.float64),
            discount=float(doc["discount"]),
            deterministic=bool(doc["deterministic"]) if "deterministic" in doc else None,
        )


@dataclass(frozen=True)
class Policy:
    """Stochastic goal-conditioned policy; every (s, g) row is a distribution."""

    probs: np.ndarray

    def __post_init__(self):
        pi = _freeze(self.probs)
        if pi.ndim != 3:
            raise ValueError(f"policy table must be (S, G, A), got shape {pi.shape}")
        if np.any(pi < 0.0):
            raise ValueError("policy has negative probabilities")
        row_err = np.abs(pi.sum(axis=2) - 1.0).max()
        if row_err > PROB_ATOL:
            raise ValueError(f"policy rows do not sum to 1 (max err {row_err:.3e})")
        object.__setattr__(self, "probs", pi)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_goals(self) -> int:
        return self.probs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[2]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_goals": self.n_goals,
            "n_actions": self.n_actions,
            "probs": self.probs.ravel().tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "Policy":
        shape = (int(doc["n_states"]), int(doc["n_goals"]), int(doc["n_actions"]))
        return Policy(np.asarray(doc["probs"], dtype=np.float64).reshape(shape))


@dataclass(frozen=True)
class OccupancyMeasure:
    """Nonnegative visitation table d(s,a;g).

    ``flow_feasible`` marks measures produced by an exact flow solve (each
    goal slice then sums to 1 and satisfies the flow constraint). Recovered
    or intermediate measures carry flow_feasible=False and are only required
    to be nonnegative.
    """

    d: np.ndarray
    flow_feasible: bool = False

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64, copy=True)
        if d.ndim != 3:
            raise ValueError(f"occupancy table must be (S, A, G), got shape {d.shape}")
        if np.any(d < -1e-12):
            raise ValueError("occupancy has negative entries")
        np.clip(d, 0.0, None, out=d)
        if self.flow_feasible:
            sums = d.sum(axis=(0, 1))
            if np.abs(sums - 1.0).max() > 1e-9:
                raise ValueError("flow-feasible occupancy must sum to 1 per goal")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n_states(self) -> int:
        return self.d.shape[0]

    @property
    def n_actions(self) -> int:
        return self.d.shape[1]

    @property
    def n_goals(self) -> int:
        return self.d.shape[2]

    def state_marginal(self) -> np.ndarray:
        """d(s;g) = sum_a d(s,a;g), shape (S, G)."""
        return self.d.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_goals": self.n_goals,
            "flow_feasible": bool(self.flow_feasible),
            "d": self.d.ravel().tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "OccupancyMeasure":
        shape = (int(doc["n_states"]), int(doc["n_actions"]), int(doc["n_goals"]))
        return OccupancyMeasure(
            np.asarray(doc["d"], dtype=np.float64).reshape(shape),
            flow_feasible=bool(doc.get("flow_feasible", False)),
        )


@dataclass(frozen=True)
class ValueFn:
    """Value table v(s;g) constrained to [0, v_max]."""

    v: np.ndarray
    v_max: float

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"value table must be (S, G), got shape {v.shape}")
        if self.v_max < 0.0:
            raise ValueError("v_max must be nonnegative")
        if np.any(v < -1e-9) or np.any(v > self.v_max + 1e-9):
            raise ValueError("value entries outside [0, v_max]")
        np.clip(v, 0.0, self.v_max, out=v)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class ShiftedAdvantage:
    """Advantage of a value function with a positive shift:
    u(s,a;g) = r(s;g) + gamma * E_{s'|s,a} v(s';g) - v(s;g) + alpha."""

    u: np.ndarray
    alpha: float

    def __post_init__(self):
        u = _freeze(self.u)
        if u.ndim != 3:
            raise ValueError(f"table must be (S, A, G), got shape {u.shape}")
        if not (self.alpha > 0.0):
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "u", u)


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def _check_policy_shape(mdp: GoalMdp, policy: Policy) -> None:
    want = (mdp.n_states, mdp.n_goals, mdp.n_actions)
    if policy.probs.shape != want:
        raise ValueError(f"policy shape {policy.probs.shape} != {want}")


def _policy_kernel(mdp: GoalMdp, policy: Policy, g: int) -> np.ndarray:
    """State-to-state kernel under the policy for goal g: K[s, s']."""
    return np.einsum("sa,sap->sp", policy.probs[:, g, :], mdp.transition)


def evaluate_policy(mdp: GoalMdp, policy: Policy) -> ValueFn:
    """Exact policy evaluation, one linear solve per goal."""
    _check_policy_shape(mdp, policy)
    S, G = mdp.n_states, mdp.n_goals
    eye = np.eye(S)
    v = np.empty((S, G))
    for g in range(G):
        K = _policy_kernel(mdp, policy, g)
        v[:, g] = np.linalg.solve(eye - mdp.discount * K, mdp.reward[:, g])
    return ValueFn(v, v_max=mdp.v_max)


def occupancy_of_policy(mdp: GoalMdp, policy: Policy) -> OccupancyMeasure:
    """Exact discounted occupancy of a policy, per goal.

    Solves the flow linear system (I - gamma K^T) x = (1-gamma) rho for each
    goal and splits the state occupancy across actions by the policy.
    """
    _check_policy_shape(mdp, policy)
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    eye = np.eye(S)
    d = np.empty((S, A, G))
    for g in range(G):
        K = _policy_kernel(mdp, policy, g)
        try:
            x = np.linalg.solve(eye - mdp.discount * K.T, (1.0 - mdp.discount) * mdp.init_dist)
        except np.linalg.LinAlgError as exc:  # unreachable for discount < 1
            raise RuntimeError(f"flow solve failed for goal {g}: {exc}") from exc
        d[:, :, g] = x[:, None] * policy.probs[:, g, :]
    measure = OccupancyMeasure(d, flow_feasible=True)
    resid = np.abs(bellman_flow_residual(mdp, measure)).max()
    if resid > FLOW_ATOL:
        raise RuntimeError(f"flow residual {resid:.3e} above tolerance {FLOW_ATOL:.0e}")
    return measure


def bellman_flow_residual(mdp: GoalMdp, measure: OccupancyMeasure) -> np.ndarray:
    """Per-(state, goal) violation of the flow constraint, shape (S, G)."""
    d = measure.d
    outflow = d.sum(axis=1)  # (S, G)
    inflow = np.einsum("tas,tag->sg", mdp.transition, d)
    return outflow - (1.0 - mdp.discount) * mdp.init_dist[:, None] - mdp.discount * inflow


def policy_from_occupancy(measure: OccupancyMeasure, n_actions: int) -> Policy:
    """Conditional action distribution of an occupancy; uniform where the
    state marginal vanishes."""
    if measure.n_actions != n_actions:
        raise ValueError(f"n_actions {n_actions} != occupancy table {measure.n_actions}")
    d = measure.d
    marg = d.sum(axis=1)  # (S, G)
    S, A, G = d.shape
    probs = np.full((S, G, A), 1.0 / A)
    pos = marg > 0.0
    ratio = np.transpose(d, (0, 2, 1))  # (S, G, A)
    probs[pos] = ratio[pos] / marg[pos][:, None]
    # guard against rounding drift in occupied rows
    probs /= probs.sum(axis=2, keepdims=True)
    return Policy(probs)


def j_value(mdp: GoalMdp, policy: Policy) -> float:
    """Expected reward under the policy's occupancy and the goal distribution."""
    occ = occupancy_of_policy(mdp, policy)
    return float(np.einsum("sag,sg,g->", occ.d, mdp.reward, mdp.goal_dist))


def concentrability(
    target: OccupancyMeasure, behavior: OccupancyMeasure, goal_dist: np.ndarray
) -> float:
    """Largest ratio of target to behavior joint occupancy over (s, a, g).

    0/0 counts as 0 (no coverage demanded where the target is absent);
    positive mass over zero behavior mass yields the flagged value inf.
    """
    if target.d.shape != behavior.d.shape:
        raise ValueError("occupancy shapes differ")
    p = np.asarray(goal_dist, dtype=np.float64)
    if p.shape != (target.n_goals,):
        raise ValueError("goal_dist length does not match occupancy tables")
    num = target.d * p[None, None, :]
    den = behavior.d * p[None, None, :]
    uncovered = (den == 0.0) & (num > 0.0)
    if np.any(uncovered):
        return math.inf
    ratio = np.zeros_like(num)
    pos = den > 0.0
    ratio[pos] = num[pos] / den[pos]
    return float(ratio.max())


def exact_optimal_policy(
    mdp: GoalMdp, tol: float = 1e-12, max_iter: int = 200_000
) -> tuple[Policy, float]:
    """Optimal deterministic policy via per-goal value iteration.

    Iterates until the Bellman residual drops below ``tol``; argmax ties are
    broken toward the lowest action index. Returns the greedy policy and its
    exactly evaluated objective value.
    """
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    probs = np.zeros((S, G, A))
    for g in range(G):
        r = mdp.reward[:, g]
        v = np.zeros(S)
        for _ in range(max_iter):
            q = mdp.transition @ v  # (S, A)
            v_new = r + mdp.discount * q.max(axis=1)
            if np.abs(v_new - v).max() <= tol:
                v = v_new
                break
            v = v_new
        else:
            raise RuntimeError("value iteration did not reach tolerance")
        greedy = np.argmax(mdp.transition @ v, axis=1)
        probs[np.arange(S), g, greedy] = 1.0
    policy = Policy(probs)
    return policy, j_value(mdp, policy)


def advantage_table(mdp: GoalMdp, v: ValueFn) -> np.ndarray:
    """r(s;g) + gamma * E_{s'|s,a} v(s';g) - v(s;g), shape (S, A, G)."""
    if v.v.shape != (mdp.n_states, mdp.n_goals):
        raise ValueError("value table shape does not match the MDP")
    tv = np.einsum("sap,pg->sag", mdp.transition, v.v)
    return mdp.reward[:, None, :] + mdp.discount * tv - v.v[:, None, :]


def build_shifted_advantage(mdp: GoalMdp, v: ValueFn, alpha: float) -> ShiftedAdvantage:
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    return ShiftedAdvantage(advantage_table(mdp, v) + alpha, alpha=alpha)


# ---------------------------------------------------------------------------
# file IO (exact round trip: floats serialized via shortest repr)
# ---------------------------------------------------------------------------


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_mdp(mdp: GoalMdp, path: str) -> None:
    _write_json(mdp.to_dict(), path)


def load_mdp(path: str) -> GoalMdp:
    return GoalMdp.from_dict(_read_json(path))


def save_policy(policy: Policy, path: str) -> None:
    _write_json(policy.to_dict(), path)


def load_policy(path: str) -> Policy:
    return Policy.from_dict(_read_json(path))


def save_occupancy(measure: OccupancyMeasure, path: str) -> None:
    _write_json(measure.to_dict(), path)


def load_occupancy(path: str) -> OccupancyMeasure:
    return OccupancyMeasure.from_dict(_read_json(path))
