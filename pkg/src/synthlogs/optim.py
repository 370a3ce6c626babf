"""Linear least squares and a dense Levenberg-Marquardt minimizer.

Every model fit in the package goes through these two routines. Box
constraints are handled outside the optimizer with :class:`BoxTransform`,
which maps bounded parameters to an unconstrained space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)


class OptimizationError(ValueError):
    pass


@dataclass(frozen=True)
class LMOptions:
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iterations: int = 200
    relative_cost_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    jacobian_step: float = 1e-6
    central_differences: bool = False

    def __post_init__(self):
        for name in ("lambda_init", "lambda_up", "lambda_down", "relative_cost_tolerance",
                     "step_tolerance", "jacobian_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LMOptions.{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("LMOptions.max_iterations must be >= 1")


@dataclass
class FitReport:
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list = field(default_factory=list)
    message: str = ""


def linear_least_squares(design, targets) -> np.ndarray:
    """Minimize ``||design @ x - targets||_2``.

    Solved through the SVD (LAPACK gelsd), so a rank-deficient design
    yields the minimum-norm solution.
    """
    a = np.asarray(design, dtype=np.float64)
    b = np.asarray(targets, dtype=np.float64)
    if a.ndim != 2 or a.size == 0 or b.size == 0:
        raise OptimizationError("empty least-squares system")
    if a.shape[0] != b.shape[0]:
        raise OptimizationError(f"design has {a.shape[0]} rows but targets has {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise OptimizationError("non-finite entries in least-squares system")
    x, *_ = scipy.linalg.lstsq(a, b, lapack_driver="gelsd")
    return x


def numerical_jacobian(fun, x, r0=None, step=1e-6, central=False):
    """Finite-difference Jacobian of a vector function with relative steps."""
    x = np.asarray(x, dtype=np.float64)
    if r0 is None and not central:
        r0 = np.asarray(fun(x), dtype=np.float64)
    cols = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        if central:
            xm = x.copy()
            xm[i] -= h
            cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h))
        else:
            cols.append((np.asarray(fun(xp)) - r0) / h)
    return np.column_stack(cols)


def levenberg_marquardt(residual_fn: Callable[[np.ndarray], np.ndarray], x0, opts: LMOptions | None = None,
                        jacobian_fn: Callable | None = None):
    """Minimize ``0.5 * sum(residual_fn(x)**2)``.

    The damped normal equations ``(J'J + lambda D) dx = -J'r`` (with ``D`` the
    diagonal of ``J'J``) are solved as an augmented least-squares problem.
    A step is accepted only if it lowers the cost; otherwise ``lambda`` is
    raised and the step recomputed.

    Returns:
        (x_opt, FitReport)
    """
    opts = opts or LMOptions()
    x = np.array(x0, dtype=np.float64)
    r = np.asarray(residual_fn(x), dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise OptimizationError("residual function is not finite at the starting point")
    cost = 0.5 * float(r @ r)
    trace = [cost]
    lam = opts.lambda_init
    converged = False
    message = "iteration limit reached"
    it = 0

    def jac(xv, rv):
        if jacobian_fn is not None:
            return np.asarray(jacobian_fn(xv), dtype=np.float64)
        return numerical_jacobian(residual_fn, xv, rv, opts.jacobian_step, opts.central_differences)

    J = jac(x, r)
    while it < opts.max_iterations:
        it += 1
        if cost == 0.0:
            converged, message = True, "zero residual"
            break
        g = J.T @ r
        diag = np.einsum("ij,ij->j", J, J)
        diag = np.maximum(diag, 1e-12 * max(1.0, diag.max(initial=0.0)))
        accepted = False
        while lam < 1e16:
            aug = np.vstack([J, np.diag(np.sqrt(lam * diag))])
            rhs = np.concatenate([-r, np.zeros(x.size)])
            dx, *_ = scipy.linalg.lstsq(aug, rhs, lapack_driver="gelsd")
            x_new = x + dx
            r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
            if np.all(np.isfinite(r_new)):
                cost_new = 0.5 * float(r_new @ r_new)
                if cost_new < cost:
                    accepted = True
                    break
            lam *= opts.lambda_up
        if not accepted:
            converged, message = True, "no descent direction found (local minimum)"
            break
        step_norm = float(np.linalg.norm(dx))
        rel = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        trace.append(cost)
        lam = max(lam / opts.lambda_down, 1e-15)
        if rel < opts.relative_cost_tolerance:
            converged, message = True, "relative cost change below tolerance"
            break
        if step_norm < opts.step_tolerance * (np.linalg.norm(x) + opts.step_tolerance):
            converged, message = True, "step below tolerance"
            break
        if not np.all(np.isfinite(g)):
            break
        J = jac(x, r)
    logger.debug("LM finished after %d iterations: %s (cost %.3g)", it, message, cost)
    return x, FitReport(final_cost=cost, iterations=it, converged=converged, cost_trace=trace, message=message)


class BoxTransform:
    """Map parameters with per-component bounds to an unconstrained space.

    Each component gets one of the kinds
      * ``"free"``   identity
      * ``"pos"``    x = lo + exp(u)          (lo defaults to 0)
      * ``"box"``    x = lo + (hi - lo) * logistic(u)
    """

    def __init__(self, kinds: Sequence[str], lower=None, upper=None):
        self.kinds = list(kinds)
        n = len(self.kinds)
        self.lower = np.zeros(n) if lower is None else np.asarray(lower, dtype=np.float64)
        self.upper = np.ones(n) if upper is None else np.asarray(upper, dtype=np.float64)
        for i, k in enumerate(self.kinds):
            if k not in ("free", "pos", "box"):
                raise ValueError(f"unknown transform kind {k!r}")
            if k == "box" and not self.upper[i] > self.lower[i]:
                raise ValueError(f"empty box for component {i}")

    def to_internal(self, x, eps=1e-12):
        x = np.asarray(x, dtype=np.float64)
        u = np.empty_like(x)
        for i, k in enumerate(self.kinds):
            if k == "free":
                u[..., i] = x[..., i]
            elif k == "pos":
                u[..., i] = np.log(np.maximum(x[..., i] - self.lower[i], eps))
            else:
                t = (x[..., i] - self.lower[i]) / (self.upper[i] - self.lower[i])
                t = np.clip(t, eps, 1.0 - eps)
                u[..., i] = np.log(t) - np.log1p(-t)
        return u

    def to_external(self, u):
        u = np.asarray(u, dtype=np.float64)
        x = np.empty_like(u)
        for i, k in enumerate(self.kinds):
            if k == "free":
                x[..., i] = u[..., i]
            elif k == "pos":
                x[..., i] = self.lower[i] + np.exp(np.clip(u[..., i], -700, 700))
            else:
                x[..., i] = self.lower[i] + (self.upper[i] - self.lower[i]) * _logistic(u[..., i])
        return x


def _logistic(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))), np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))))
