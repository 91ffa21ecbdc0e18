"""Offline dataset generation, splitting, and JSON-lines serialization.

Transition records are sampled i.i.d. from the exact joint distribution
p(g) * d_mu(s,a;g) of the behavior policy (computed by a linear solve, not
by truncated rollouts), followed by one environment step for s'. Datasets
are columnar numpy arrays and immutable after construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdp import GoalMdp, OccupancyMeasure, Policy, occupancy_of_policy

__all__ = [
    "InitDataset",
    "OfflineDataset",
    "exhaustive_dataset",
    "generate_dataset",
    "load_init_jsonl",
    "load_jsonl",
    "save_init_jsonl",
    "save_jsonl",
    "split_dataset",
]


def _int_col(values, name: str) -> np.ndarray:
    col = np.asarray(values, dtype=np.int64)
    if col.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    col.setflags(write=False)
    return col


@dataclass(frozen=True)
class OfflineDataset:
    """Transition records (s, a, r, s_next, g) in column form."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        s = _int_col(self.s, "s")
        a = _int_col(self.a, "a")
        s_next = _int_col(self.s_next, "s_next")
        g = _int_col(self.g, "g")
        r = np.asarray(self.r, dtype=np.float64)
        if not (s.shape == a.shape == r.shape == s_next.shape == g.shape):
            raise ValueError("dataset columns must have equal length")
        r.setflags(write=False)
        for name, col in (("s", s), ("a", a), ("r", r), ("s_next", s_next), ("g", g)):
            object.__setattr__(self, name, col)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def take(self, idx: np.ndarray) -> "OfflineDataset":
        return OfflineDataset(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.g[idx])


@dataclass(frozen=True)
class InitDataset:
    """Initial (s0, g0) pairs in column form."""

    s0: np.ndarray
    g0: np.ndarray

    def __post_init__(self):
        s0 = _int_col(self.s0, "s0")
        g0 = _int_col(self.g0, "g0")
        if s0.shape != g0.shape:
            raise ValueError("dataset columns must have equal length")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "g0", g0)

    @property
    def n0(self) -> int:
        return self.s0.shape[0]


def _sample_next_states(mdp: GoalMdp, s: np.ndarray, a: np.ndarray, rng) -> np.ndarray:
    cdf = np.cumsum(mdp.transition, axis=2)
    u = rng.random(s.shape[0])
    rows = cdf[s, a]  # (n, S)
    return (rows < u[:, None]).sum(axis=1).astype(np.int64)


def generate_dataset(
    mdp: GoalMdp, behavior: Policy, n: int, n0: int, seed: int
) -> tuple[OfflineDataset, InitDataset, OccupancyMeasure]:
    """Draw an offline dataset from a strictly positive behavior policy.

    (s, a, g) triples are i.i.d. from the exact behavior occupancy weighted
    by the goal distribution; rewards are the deterministic state-goal
    rewards; s' is one transition step. Also returns the exact behavior
    occupancy used. Deterministic given the seed.
    """
    if n <= 0 or n0 <= 0:
        raise ValueError("dataset sizes must be positive")
    if behavior.probs.min() <= 0.0:
        raise ValueError("behavior policy must be strictly positive")
    mu = occupancy_of_policy(mdp, behavior)
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    rng = np.random.default_rng(seed)

    joint = (mu.d * mdp.goal_dist[None, None, :]).ravel()
    joint = joint / joint.sum()
    flat = rng.choice(joint.size, size=n, p=joint)
    s = flat // (A * G)
    a = (flat // G) % A
    g = flat % G
    r = mdp.reward[s, g]
    s_next = _sample_next_states(mdp, s, a, rng)

    s0 = rng.choice(S, size=n0, p=mdp.init_dist)
    g0 = rng.choice(G, size=n0, p=mdp.goal_dist)
    return (
        OfflineDataset(s, a, r, s_next, g),
        InitDataset(s0.astype(np.int64), g0.astype(np.int64)),
        mu,
    )


def split_dataset(dataset: OfflineDataset, seed: int) -> tuple[OfflineDataset, OfflineDataset]:
    """Uniformly random disjoint halves of sizes (floor(n/2), ceil(n/2))."""
    n = dataset.n
    if n < 2:
        raise ValueError("need at least two records to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    first = np.sort(perm[: n // 2])
    second = np.sort(perm[n // 2 :])
    return dataset.take(first), dataset.take(second)


def exhaustive_dataset(
    mdp: GoalMdp, mu: OccupancyMeasure, scale: int, scale0: int, atol: float = 1e-9
) -> tuple[OfflineDataset, InitDataset]:
    """Population datasets: every (s, a, g, s') branch enumerated with
    multiplicity proportional to its exact probability.

    Requires scale * p(g) * mu(s,a;g) * P(s'|s,a) (and scale0 * rho(s) * p(g))
    to be integers within ``atol``; raises otherwise. Useful on instances
    whose behavior occupancy is exactly rational.
    """
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    s_col, a_col, r_col, sn_col, g_col = [], [], [], [], []
    for g in range(G):
        for s in range(S):
            for a in range(A):
                base = mdp.goal_dist[g] * mu.d[s, a, g]
                for sn in range(S):
                    m = scale * base * mdp.transition[s, a, sn]
                    m_int = round(m)
                    if abs(m - m_int) > atol * scale:
                        raise ValueError(
                            f"scale {scale} does not make the branch ({s},{a},{g},{sn}) integral"
                        )
                    if m_int:
                        s_col.extend([s] * m_int)
                        a_col.extend([a] * m_int)
                        r_col.extend([mdp.reward[s, g]] * m_int)
                        sn_col.extend([sn] * m_int)
                        g_col.extend([g] * m_int)
    s0_col, g0_col = [], []
    for g in range(G):
        for s in range(S):
            m = scale0 * mdp.init_dist[s] * mdp.goal_dist[g]
            m_int = round(m)
            if abs(m - m_int) > atol * scale0:
                raise ValueError(f"scale0 {scale0} does not make the pair ({s},{g}) integral")
            if m_int:
                s0_col.extend([s] * m_int)
                g0_col.extend([g] * m_int)
    dataset = OfflineDataset(s_col, a_col, r_col, sn_col, g_col)
    init = InitDataset(s0_col, g0_col)
    if dataset.n != scale or init.n0 != scale0:
        raise ValueError("enumeration mass does not add up to the requested scale")
    return dataset, init


# ---------------------------------------------------------------------------
# JSON-lines serialization (one record per line, lossless float round trip)
# ---------------------------------------------------------------------------


def save_jsonl(dataset: OfflineDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dataset.n):
            fh.write(
                json.dumps(
                    {
                        "s": int(dataset.s[i]),
                        "a": int(dataset.a[i]),
                        "r": float(dataset.r[i]),
                        "s_next": int(dataset.s_next[i]),
                        "g": int(dataset.g[i]),
                    }
                )
            )
            fh.write("\n")


def load_jsonl(path: str) -> OfflineDataset:
    cols = {"s": [], "a": [], "r": [], "s_next": [], "g": []}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in cols:
                cols[key].append(rec[key])
    return OfflineDataset(cols["s"], cols["a"], cols["r"], cols["s_next"], cols["g"])


def save_init_jsonl(init: InitDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(init.n0):
            fh.write(json.dumps({"s0": int(init.s0[i]), "g0": int(init.g0[i])}))
            fh.write("\n")


def load_init_jsonl(path: str) -> InitDataset:
    s0, g0 = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            s0.append(rec["s0"])
            g0.append(rec["g0"])
    return InitDataset(s0, g0)
