"""Utility-based shortfall risk: SAA root finding, Robbins-Monro search,
CLT variance, and optimization over a decision vector.

The shortfall risk is the smallest capital ``t`` with
``mean(l(xi - t)) <= lambda``.  The sample map ``t -> mean(l(xi_i - t))`` is
nonincreasing, and the constraint is active at the optimum, so the SAA
problem reduces to a monotone root find.  The Robbins-Monro mode instead
streams draws through the projected recursion
``t_{k+1} = clip(t_k + c/k^gamma * (l(xi_{k+1} - t_k) - lambda))`` and
returns a point estimate only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .distributions import ScenarioSet, sample
from .errors import (
    BracketError,
    CapabilityError,
    ConvergenceWarning,
    DataError,
    DegeneracyError,
    ParameterError,
)
from .losses import LossFunction
from .oce import Bracket, CostModel, FeasibleRegion, default_bracket, _scalars


@dataclass(frozen=True)
class ShortfallSpec:
    """Loss, threshold and (optional) root bracket defining one shortfall risk."""

    loss: LossFunction
    lam: float
    bracket: Bracket | None = None

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ParameterError(f"threshold must be finite, got {self.lam}")


@dataclass(frozen=True)
class RmSchedule:
    """Robbins-Monro schedule: steps c/k^gamma for k = 1..n from start t0."""

    c: float
    gamma: float
    n: int
    t0: float | None = None  # default: bracket midpoint

    def __post_init__(self):
        if not self.c > 0.0:
            raise ParameterError(f"step constant must be positive, got {self.c}")
        if not 0.5 < self.gamma <= 1.0:
            raise ParameterError(f"step exponent must lie in (1/2, 1], got {self.gamma}")
        if self.n < 1:
            raise ParameterError(f"iteration count must be >= 1, got {self.n}")


class SrEstimate(NamedTuple):
    t_star: float
    sigma2: float


def _sample_mean_loss(loss: LossFunction, x: np.ndarray, t: float) -> float:
    return float(np.mean(loss.eval(x - t)))


def _sr_root(loss: LossFunction, x: np.ndarray, lam: float, bracket: Bracket, tol: float) -> float:
    """Bisection for mean(l(x - t)) = lam; the map is nonincreasing in t."""
    m_lo = _sample_mean_loss(loss, x, bracket.lo)
    m_hi = _sample_mean_loss(loss, x, bracket.hi)
    if not m_lo > lam:
        raise BracketError(
            f"lower endpoint t_lo={bracket.lo} fails: mean loss {m_lo:.6g} <= lambda {lam:.6g}"
        )
    if not m_hi < lam:
        raise BracketError(
            f"upper endpoint t_hi={bracket.hi} fails: mean loss {m_hi:.6g} >= lambda {lam:.6g}"
        )
    lo, hi = bracket.lo, bracket.hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _sample_mean_loss(loss, x, mid) > lam:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sr_sigma2(loss: LossFunction, x: np.ndarray, t: float) -> float:
    values = loss.eval(x - t)
    denom = float(np.mean(loss.deriv(x - t)))
    if denom <= 1e-12:
        raise DegeneracyError(
            f"mean derivative {denom:.3e} is not positive at the root; "
            "the loss must be strictly increasing with positive probability there"
        )
    return float(np.var(values)) / denom**2


def sr_estimate_saa(spec: ShortfallSpec, scenarios, tol: float = 1e-9) -> SrEstimate:
    """SAA shortfall-risk estimate with its asymptotic variance."""
    x = _scalars(scenarios)
    bracket = spec.bracket if spec.bracket is not None else default_bracket(x)
    t = _sr_root(spec.loss, x, spec.lam, bracket, tol)
    return SrEstimate(t, _sr_sigma2(spec.loss, x, t))


def sr_estimate_rm(spec: ShortfallSpec, dist, sched: RmSchedule, seed: int) -> float:
    """Robbins-Monro iterate after n projected steps (point estimate only)."""
    if spec.bracket is None:
        raise ParameterError("Robbins-Monro mode needs an explicit bracket")
    lo, hi = spec.bracket.lo, spec.bracket.hi
    draws = sample(dist, sched.n, seed).scalars()
    steps = sched.c / np.arange(1.0, sched.n + 1.0) ** sched.gamma
    t = spec.bracket.mid if sched.t0 is None else float(sched.t0)
    t = min(max(t, lo), hi)
    lam = spec.lam
    eval_scalar = spec.loss.eval_scalar
    for k in range(sched.n):
        t = t + steps[k] * (eval_scalar(draws[k] - t) - lam)
        if t < lo:
            t = lo
        elif t > hi:
            t = hi
    return t


@dataclass(frozen=True)
class SrOptimizeResult:
    x: np.ndarray
    t_star: float
    sigma2: float
    iterations: int
    converged: bool


def sr_optimize(
    spec: ShortfallSpec,
    cost: CostModel,
    scenarios: ScenarioSet,
    region: FeasibleRegion,
    tol: float = 1e-6,
    max_iter: int = 3000,
) -> SrOptimizeResult:
    """Minimize the empirical shortfall risk of c(x, xi) over x.

    Projected subgradient on x, where each iterate solves the inner root
    problem exactly and the subgradient is the plug-in ratio
    ``mean(l' grad_x c) / mean(l')`` at the current root.
    """
    if not cost.convex:
        raise CapabilityError("sr_optimize requires a cost flagged convex in x")
    if scenarios.n == 0:
        raise DataError("empty scenario set")
    values = scenarios.values
    n = scenarios.n
    inner_tol = min(tol, 1e-8)

    def root_at(x):
        costs = np.asarray(cost.evaluate(x, values), dtype=float)
        bracket = spec.bracket if spec.bracket is not None else default_bracket(costs)
        return costs, _sr_root(spec.loss, costs, spec.lam, bracket, inner_tol)

    x = region.center()
    costs, t = root_at(x)
    d = spec.loss.deriv(costs - t)
    denom = float(np.mean(d))
    if denom <= 1e-12:
        raise DegeneracyError("mean loss derivative vanished at the starting point")
    g = cost.gradient(x, values).T @ d / (n * denom)
    step_scale = (region.diameter() + 1.0) / max(float(np.linalg.norm(g)), 1e-12)

    best_t, best_x = t, x.copy()
    improved_late = False
    late_start = max_iter - max(1, max_iter // 10)
    for k in range(1, max_iter + 1):
        x = region.project(x - (step_scale / math.sqrt(k)) * g)
        costs, t = root_at(x)
        d = spec.loss.deriv(costs - t)
        denom = float(np.mean(d))
        if denom <= 1e-12:
            raise DegeneracyError("mean loss derivative vanished during the iteration")
        g = cost.gradient(x, values).T @ d / (n * denom)
        if t < best_t - 1e-15:
            if k >= late_start and t < best_t - max(tol, 1e-12) * max(1.0, abs(best_t)):
                improved_late = True
            best_t, best_x = t, x.copy()
    if improved_late:
        warnings.warn(
            "shortfall objective still improving when the iteration budget ran out; "
            "best iterate returned",
            ConvergenceWarning,
            stacklevel=2,
        )
    costs, t_star = root_at(best_x)
    sigma2 = _sr_sigma2(spec.loss, costs, t_star)
    return SrOptimizeResult(
        x=best_x, t_star=t_star, sigma2=sigma2, iterations=max_iter, converged=not improved_late
    )
