"""Sample-average estimation and optimization of optimized-certainty-
equivalent risk measures.

The sample problem ``min_{t in T} t + mean(l(xi_i - t))`` is solved by
bisection on the sample subgradient ``1 - mean(l'(xi_i - t))``, which is
nondecreasing in ``t`` for every convex nondecreasing loss.  When the sample
argmin is an interval the left endpoint is returned (the sample-VaR
convention); a :class:`DegeneracyWarning` flags intervals wider than the
bisection tolerance, since the plain normal CI theory assumes a unique
minimizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import ndtri

from .distributions import ScenarioSet
from .errors import (
    BracketWarning,
    CapabilityError,
    ConvergenceWarning,
    DataError,
    DegeneracyError,
    DegeneracyWarning,
    DomainError,
    ParameterError,
)
from .losses import LossFunction
from .reports import EstimateReport


@dataclass(frozen=True)
class Bracket:
    """Compact interval known to contain the optimal t."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ParameterError(f"bracket needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def default_bracket(values: np.ndarray) -> Bracket:
    """[min - 1, max + 1]: wide enough for every normalized loss family."""
    return Bracket(float(np.min(values)) - 1.0, float(np.max(values)) + 1.0)


def _scalars(scenarios) -> np.ndarray:
    if isinstance(scenarios, ScenarioSet):
        if scenarios.n == 0:
            raise DataError("empty scenario set")
        return scenarios.scalars()
    values = np.asarray(scenarios, dtype=float).ravel()
    if values.size == 0:
        raise DataError("empty scenario set")
    return values


class OceEstimate(NamedTuple):
    value: float
    t_star: float


def _solve_sample_oce(
    loss: LossFunction,
    x: np.ndarray,
    bracket: Bracket,
    tol: float,
    check_width: bool = True,
) -> OceEstimate:
    def subgrad(t: float) -> float:
        return 1.0 - loss.mean_deriv(x, t)

    def objective(t: float) -> float:
        return t + float(np.mean(loss.eval(x - t)))

    lo, hi = bracket.lo, bracket.hi
    if subgrad(lo) >= 0.0:
        warnings.warn(
            "sample minimizer pinned at the lower bracket endpoint; T may be mis-specified",
            BracketWarning,
            stacklevel=3,
        )
        return OceEstimate(objective(lo), lo)
    if subgrad(hi) <= 0.0:
        warnings.warn(
            "sample minimizer pinned at the upper bracket endpoint; T may be mis-specified",
            BracketWarning,
            stacklevel=3,
        )
        return OceEstimate(objective(hi), hi)

    # left endpoint of the argmin set: first t with nonnegative subgradient
    a_lo, a_hi = lo, hi
    while a_hi - a_lo > tol:
        mid = 0.5 * (a_lo + a_hi)
        if subgrad(mid) >= 0.0:
            a_hi = mid
        else:
            a_lo = mid
    f_lo, f_hi = objective(a_lo), objective(a_hi)
    result = OceEstimate(f_lo, a_lo) if f_lo <= f_hi else OceEstimate(f_hi, a_hi)

    if check_width and subgrad(min(a_hi + tol, hi)) <= 0.0:
        # the argmin set extends beyond resolution: measure its right
        # endpoint; the inner bound (b_lo - a_hi) cannot trip on a unique
        # minimizer merely from bisection resolution
        b_lo, b_hi = a_lo, hi
        while b_hi - b_lo > tol:
            mid = 0.5 * (b_lo + b_hi)
            if subgrad(mid) > 0.0:
                b_hi = mid
            else:
                b_lo = mid
        width = b_lo - a_hi
        if width > tol:
            warnings.warn(
                f"sample argmin is an interval at least {width:.3g} wide; "
                "the normal CI assumes a unique minimizer",
                DegeneracyWarning,
                stacklevel=3,
            )
    return result


def oce_estimate(
    loss: LossFunction,
    scenarios,
    bracket: Bracket | None = None,
    tol: float = 1e-9,
) -> OceEstimate:
    """Estimate the OCE risk: value and minimizer of the sample problem."""
    x = _scalars(scenarios)
    if bracket is None:
        bracket = default_bracket(x)
    return _solve_sample_oce(loss, x, bracket, tol)


def oce_variance(loss: LossFunction, scenarios, t_star: float) -> float:
    """Plug-in estimate of the asymptotic variance of the value estimate."""
    x = _scalars(scenarios)
    return float(np.var(loss.eval(x - t_star)))


def oce_confidence_interval(
    estimate: float, sigma2: float, n: int, level: float
) -> tuple[float, float]:
    """Asymptotic-normal interval: estimate +- z_{(1+level)/2} sqrt(sigma2/n)."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0,1), got {level}")
    if sigma2 < 0.0:
        raise ParameterError(f"variance must be nonnegative, got {sigma2}")
    if n <= 0:
        raise DataError(f"positive sample size required, got {n}")
    half = float(ndtri(0.5 * (1.0 + level))) * math.sqrt(sigma2 / n)
    return (estimate - half, estimate + half)


def oce_solution_variance(loss: LossFunction, scenarios, t_star: float) -> float:
    """Asymptotic variance of the minimizer: Var[l'] / mean[l'']^2.

    Requires a twice-differentiable loss; raises :class:`DegeneracyError`
    when the curvature term vanishes (flat sample objective).
    """
    x = _scalars(scenarios)
    if not loss.has_deriv2:
        raise CapabilityError(f"{loss.tag} loss has no usable second derivative")
    d1 = loss.deriv(x - t_star)
    d2 = loss.deriv2(x - t_star)
    denom = float(np.mean(d2))
    if denom <= 1e-12:
        raise DegeneracyError(
            f"mean curvature {denom:.3e} is not positive; solution CLT does not apply"
        )
    return float(np.var(d1)) / denom**2


def estimate_report(
    loss: LossFunction,
    scenarios: ScenarioSet,
    bracket: Bracket | None = None,
    level: float = 0.95,
    tol: float = 1e-9,
) -> EstimateReport:
    """Full estimation pipeline: point estimate, variance, and interval."""
    value, t_star = oce_estimate(loss, scenarios, bracket, tol)
    sigma2 = oce_variance(loss, scenarios, t_star)
    ci_lo, ci_hi = oce_confidence_interval(value, sigma2, scenarios.n, level)
    return EstimateReport(
        estimate=value,
        t_star=t_star,
        sigma2=sigma2,
        n=scenarios.n,
        level=level,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        seed=scenarios.seed,
    )


# ------------------------------------------------------------ optimization


@dataclass(frozen=True)
class CostModel:
    """Cost c(x, xi) with its x-subgradient, vectorized over scenarios.

    ``evaluate(x, values)`` maps (d,) x (n,k) -> (n,);
    ``gradient(x, values)`` -> (n, d).
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    convex: bool = True


def linear_portfolio_cost(dim: int) -> CostModel:
    """c(x, xi) = -x.xi: the loss of holding allocation x of returns xi."""
    return CostModel(
        evaluate=lambda x, values: -(values @ x),
        gradient=lambda x, values: -values,
        dim=dim,
        convex=True,
    )


class FeasibleRegion:
    """Box [lower, upper]^d, optionally intersected with the simplex sum(x)=1."""

    def __init__(self, lower, upper, simplex: bool = False):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ParameterError("box bounds must be two vectors of equal length")
        if np.any(self.lower > self.upper):
            raise ParameterError("box lower bound exceeds upper bound")
        self.simplex = bool(simplex)
        if self.simplex and not (self.lower.sum() <= 1.0 <= self.upper.sum()):
            raise ParameterError("simplex constraint is infeasible within the box")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not self.simplex:
            return np.clip(v, self.lower, self.upper)
        # bisection on the shift tau: sum(clip(v - tau)) is nonincreasing in tau
        lo = float(np.min(v - self.upper)) - 1.0
        hi = float(np.max(v - self.lower)) + 1.0
        for _ in range(100):
            tau = 0.5 * (lo + hi)
            total = float(np.sum(np.clip(v - tau, self.lower, self.upper)))
            if total > 1.0:
                lo = tau
            else:
                hi = tau
        return np.clip(v - 0.5 * (lo + hi), self.lower, self.upper)

    def center(self) -> np.ndarray:
        return self.project(0.5 * (self.lower + self.upper))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))


@dataclass(frozen=True)
class OptimizeResult:
    x: np.ndarray
    t_star: float
    value: float
    iterations: int
    converged: bool


def _default_cost_bracket(costs: np.ndarray) -> Bracket:
    span = float(np.max(costs) - np.min(costs)) + 1.0
    return Bracket(float(np.min(costs)) - 2.0 * span, float(np.max(costs)) + 2.0 * span)


def oce_optimize(
    loss: LossFunction,
    cost: CostModel,
    scenarios: ScenarioSet,
    region: FeasibleRegion,
    bracket: Bracket | None = None,
    tol: float = 1e-4,
    max_iter: int = 8000,
) -> OptimizeResult:
    """Minimize the sample OCE of c(x, xi) over x by projected subgradient.

    Joint subgradient steps in (x, t) with step a/sqrt(k), a calibrated from
    the initial subgradient norm; iterates are Polyak-averaged.  The returned
    value re-solves t exactly at the best candidate x, so it is never worse
    than the best iterate visited.
    """
    if not cost.convex:
        raise CapabilityError("oce_optimize requires a cost flagged convex in x")
    if scenarios.n == 0:
        raise DataError("empty scenario set")
    values = scenarios.values
    n = scenarios.n

    x = region.center()
    costs = np.asarray(cost.evaluate(x, values), dtype=float)
    if bracket is None:
        bracket = _default_cost_bracket(costs)
    _, t = _solve_sample_oce(loss, costs, bracket, 1e-10, check_width=False)

    def joint_objective(costs_arr, t_val):
        return t_val + float(np.mean(loss.eval(costs_arr - t_val)))

    d = loss.deriv(costs - t)
    g_x = cost.gradient(x, values).T @ d / n
    g_t = 1.0 - float(np.mean(d))
    g0 = math.sqrt(float(g_x @ g_x) + g_t * g_t)
    step_scale = (region.diameter() + 1.0) / max(g0, 1e-12)

    best_val = joint_objective(costs, t)
    best_x = x.copy()
    x_sum = x.copy()
    improved_late = False
    late_start = max_iter - max(1, max_iter // 10)

    for k in range(1, max_iter + 1):
        step = step_scale / math.sqrt(k)
        x = region.project(x - step * g_x)
        t = min(max(t - step * g_t, bracket.lo), bracket.hi)
        costs = np.asarray(cost.evaluate(x, values), dtype=float)
        d = loss.deriv(costs - t)
        g_x = cost.gradient(x, values).T @ d / n
        g_t = 1.0 - float(np.mean(d))
        val = joint_objective(costs, t)
        if val < best_val - 1e-15:
            if k >= late_start and val < best_val - max(tol, 1e-12) * max(1.0, abs(best_val)):
                improved_late = True
            best_val = val
            best_x = x.copy()
        x_sum += x

    candidates = [best_x, region.project(x_sum / (max_iter + 1))]
    best = None
    for cand in candidates:
        cand_costs = np.asarray(cost.evaluate(cand, values), dtype=float)
        v, t_star = _solve_sample_oce(loss, cand_costs, bracket, 1e-10, check_width=False)
        if best is None or v < best[0]:
            best = (v, t_star, cand)
    if improved_late:
        warnings.warn(
            "objective still improving when the iteration budget ran out; "
            "best iterate returned",
            ConvergenceWarning,
            stacklevel=2,
        )
    v, t_star, x_opt = best
    return OptimizeResult(x=x_opt, t_star=t_star, value=v, iterations=max_iter, converged=not improved_late)
