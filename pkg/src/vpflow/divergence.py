"""Chi-square divergence machinery in closed form.

With f(x) = (x-1)^2/2 the convex conjugate is f*(x) = (x+1)^2/2 - 1/2. For
the scaled function g = alpha*f:

    g*(x)  = alpha*(x/alpha + 1)^2/2 - alpha/2     (vertex at x = -alpha)
    g*'(x) = x/alpha + 1

Since min g* = g*(-alpha) = -alpha/2, the recentered conjugate is
gbar*(x) = (x+alpha)^2/(2*alpha), and its restriction to the nondecreasing
branch {g*' >= 0} = {x >= -alpha} simplifies to

    g*_+(x) = (x+alpha)_+^2 / (2*alpha),

which is the form used in hot paths; the defining indicator form is kept as
an independent oracle in the tests. Only the chi-square divergence is
provided: other divergences are deliberately not pluggable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import OccupancyMeasure

__all__ = [
    "ChiSquareSpec",
    "f_conjugate",
    "f_divergence",
    "f_value",
    "g_conjugate",
    "g_conjugate_plus",
    "g_conjugate_prime",
    "g_value",
]


@dataclass(frozen=True)
class ChiSquareSpec:
    """Regularization strength for the scaled divergence g = alpha * f."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")


def f_value(x):
    """f(x) = (x-1)^2 / 2."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (x - 1.0) ** 2


def f_conjugate(x):
    """f*(x) = (x+1)^2 / 2 - 1/2."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (x + 1.0) ** 2 - 0.5


def g_value(spec: ChiSquareSpec, x):
    """g(x) = alpha * f(x)."""
    return spec.alpha * f_value(x)


def g_conjugate(spec: ChiSquareSpec, x):
    """g*(x) = alpha * f*(x / alpha)."""
    x = np.asarray(x, dtype=np.float64)
    a = spec.alpha
    return 0.5 * a * (x / a + 1.0) ** 2 - 0.5 * a


def g_conjugate_prime(spec: ChiSquareSpec, x):
    """g*'(x) = x / alpha + 1."""
    x = np.asarray(x, dtype=np.float64)
    return x / spec.alpha + 1.0


def g_conjugate_plus(spec: ChiSquareSpec, x):
    """Nondecreasing-branch recentered conjugate (x+alpha)_+^2 / (2*alpha)."""
    x = np.asarray(x, dtype=np.float64)
    a = spec.alpha
    return np.square(np.clip(x + a, 0.0, None)) / (2.0 * a)


def f_divergence(d: OccupancyMeasure, mu: OccupancyMeasure, goal_dist) -> float:
    """D_f(d || mu) under the joint weighting by the goal distribution.

    Returns the flagged value inf when d puts mass where mu has none.
    """
    if d.d.shape != mu.d.shape:
        raise ValueError("occupancy shapes differ")
    p = np.asarray(goal_dist, dtype=np.float64)
    if p.shape != (d.n_goals,):
        raise ValueError("goal_dist length does not match occupancy tables")
    dw = d.d * p[None, None, :]
    mw = mu.d * p[None, None, :]
    if np.any((mw == 0.0) & (dw > 0.0)):
        return math.inf
    pos = mw > 0.0
    return float(np.sum(mw[pos] * f_value(dw[pos] / mw[pos])))
