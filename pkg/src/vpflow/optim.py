"""Deterministic box-constrained convex minimization used by the solvers.

The workhorse is projected gradient with a monotone line search, refined by
exact Newton steps on the currently active smooth piece whenever a Hessian
(or Gauss-Newton surrogate) is available. Problems here are dense and tiny
(at most a few hundred variables), so direct linear algebra is cheap and the
combination reaches gradient-mapping norms near machine precision.

Both objective kinds below have the piecewise-quadratic form shared by the
occupancy programs and the empirical value-learning objectives:

    QuadraticObjective:        0.5 x'Qx + q'x + c0
    ClampedQuadraticObjective: l'x + 0.5 * sum_j w_j ((c + Mx)_j)_+^2 + c0
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BoxResult",
    "ClampedQuadraticObjective",
    "QuadraticObjective",
    "minimize_box",
]

_ARMIJO = 1e-4
_MAX_BACKTRACK = 40


@dataclass
class BoxResult:
    x: np.ndarray
    objective_trace: list = field(default_factory=list)
    final_gradient_norm: float = np.inf
    tolerance_used: float = np.nan
    converged: bool = False
    iterations: int = 0


class QuadraticObjective:
    """0.5 x'Qx + q'x + c0 with Q symmetric positive semidefinite."""

    def __init__(self, Q: np.ndarray, q: np.ndarray, c0: float = 0.0):
        self.Q = Q
        self.q = q
        self.c0 = c0

    def value_grad(self, x):
        Qx = self.Q @ x
        val = 0.5 * float(x @ Qx) + float(self.q @ x) + self.c0
        return val, Qx + self.q

    def hessian(self, x):
        return self.Q

    def lipschitz(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])


class ClampedQuadraticObjective:
    """l'x + 0.5 * sum_j w_j ((c + Mx)_j)_+^2 + c0.

    Convex and continuously differentiable (the clamp enters squared); the
    Hessian is the Gauss-Newton matrix of the active rows.
    """

    def __init__(self, lin: np.ndarray, w: np.ndarray, c: np.ndarray, M: np.ndarray, c0: float = 0.0):
        self.lin = lin
        self.w = w
        self.c = c
        self.M = M
        self.c0 = c0

    def residual_plus(self, x):
        return np.clip(self.c + self.M @ x, 0.0, None)

    def value_grad(self, x):
        rp = self.residual_plus(x)
        val = float(self.lin @ x) + 0.5 * float(self.w @ (rp * rp)) + self.c0
        grad = self.lin + self.M.T @ (self.w * rp)
        return val, grad

    def hessian(self, x):
        active = (self.c + self.M @ x) > 0.0
        Ma = self.M[active]
        return Ma.T @ (self.w[active, None] * Ma)

    def lipschitz(self) -> float:
        H = self.M.T @ (self.w[:, None] * self.M)
        return float(np.linalg.eigvalsh(H)[-1])


def _grad_mapping_norm(x, grad, lo, hi, step):
    moved = np.clip(x - step * grad, lo, hi)
    return float(np.abs(x - moved).max() / step)


def minimize_box(
    obj,
    x0: np.ndarray,
    lo,
    hi,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    use_newton: bool = True,
    ridge: float = 1e-12,
) -> BoxResult:
    """Minimize a convex objective over the box [lo, hi].

    Every accepted step strictly decreases the objective, so the recorded
    trace is monotone. Convergence is declared when the projected-gradient
    mapping (step 1/L) has max-norm at most ``tol``.
    """
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), x0.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), x0.shape)
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    L = max(obj.lipschitz(), 1e-12)
    step = 1.0 / L

    f, grad = obj.value_grad(x)
    trace = [f]
    gm = _grad_mapping_norm(x, grad, lo, hi, step)
    converged = gm <= tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        accepted = False
        if use_newton:
            pinned = ((x <= lo) & (grad > 0.0)) | ((x >= hi) & (grad < 0.0))
            free = ~pinned
            if free.any():
                H = obj.hessian(x)
                Hff = H[np.ix_(free, free)]
                Hff = Hff + (ridge * max(1.0, np.trace(Hff) / max(1, Hff.shape[0]))) * np.eye(Hff.shape[0])
                try:
                    d_free = np.linalg.solve(Hff, -grad[free])
                except np.linalg.LinAlgError:
                    d_free = np.linalg.lstsq(Hff, -grad[free], rcond=None)[0]
                d = np.zeros_like(x)
                d[free] = d_free
                t = 1.0
                for _ in range(_MAX_BACKTRACK):
                    xc = np.clip(x + t * d, lo, hi)
                    fc, gc = obj.value_grad(xc)
                    pred = float(grad @ (xc - x))
                    if fc <= f + _ARMIJO * min(pred, 0.0) and fc < f:
                        x, f, grad = xc, fc, gc
                        accepted = True
                        break
                    t *= 0.5
        if not accepted:
            t = step
            for _ in range(_MAX_BACKTRACK):
                xc = np.clip(x - t * grad, lo, hi)
                fc, gc = obj.value_grad(xc)
                if fc < f:
                    x, f, grad = xc, fc, gc
                    accepted = True
                    break
                t *= 0.5
        trace.append(f)
        gm = _grad_mapping_norm(x, grad, lo, hi, step)
        if gm <= tol:
            converged = True
        elif not accepted:
            break  # no further float-representable progress
    return BoxResult(
        x=x,
        objective_trace=trace,
        final_gradient_norm=gm,
        tolerance_used=tol,
        converged=converged,
        iterations=it,
    )
