"""Pathwise derivative estimation of risk measures in a scalar parameter.

A parametric family produces paired draws ``(xi(theta), xi'(theta))`` from
common random indices.  The OCE derivative is estimated in two stages: a
large stage-1 sample pins the inner minimizer, an independent stage-2 sample
(disjoint substream lanes of the same seed) averages
``l'(xi(theta) - t) * xi'(theta)``, which carries a plain CLT interval.  The
shortfall-risk derivative is the plug-in ratio of two stage-free sample
means; the paper proves its consistency but gives no interval, so it is a
point estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .distributions import LANE_STRIDE, ScenarioSet, parse_distribution, read_scenarios, sample
from .distributions import Empirical
from .errors import DegeneracyError, DomainError, ParameterError, ScheduleError, ShapeError
from .losses import CvarLoss, LossFunction
from .oce import Bracket, oce_estimate
from .shortfall import ShortfallSpec, sr_estimate_saa


class ParametricLoss:
    """Base for parametric loss families with pathwise derivatives."""

    domain: tuple[float, float] = (-math.inf, math.inf)

    def _check_theta(self, theta: float) -> float:
        theta = float(theta)
        if not self.domain[0] < theta < self.domain[1]:
            raise DomainError(
                f"theta={theta} outside the family domain ({self.domain[0]}, {self.domain[1]})"
            )
        return theta

    def paired(self, theta: float, n: int, seed: int, lane_offset: int = 0) -> ScenarioSet:
        """Draw n rows of (xi(theta), xi'(theta)) from common random indices."""
        raise NotImplementedError


def _require_univariate(dist):
    if dist.dim != 1:
        raise ShapeError(f"family needs a univariate base distribution, got dim {dist.dim}")
    return dist


@dataclass(frozen=True)
class LocationFamily(ParametricLoss):
    """xi(theta) = Z + theta with derivative identically 1."""

    base: object

    def __post_init__(self):
        _require_univariate(self.base)

    def paired(self, theta, n, seed, lane_offset=0):
        theta = self._check_theta(theta)
        z = sample(self.base, n, seed, lane_offset).scalars()
        return ScenarioSet(
            np.column_stack([z + theta, np.ones_like(z)]),
            seed=seed,
            origin=f"location({self.base!r})@{theta}",
        )


@dataclass(frozen=True)
class ScaleFamily(ParametricLoss):
    """xi(theta) = theta * Z with derivative Z; theta must stay positive."""

    base: object
    domain = (0.0, math.inf)

    def __post_init__(self):
        _require_univariate(self.base)

    def paired(self, theta, n, seed, lane_offset=0):
        theta = self._check_theta(theta)
        z = sample(self.base, n, seed, lane_offset).scalars()
        return ScenarioSet(
            np.column_stack([theta * z, z]), seed=seed, origin=f"scale({self.base!r})@{theta}"
        )


class PortfolioFamily(ParametricLoss):
    """Loss of a position of size theta in a fixed allocation of returns.

    xi(theta) = -theta * (w . R) with derivative -(w . R); weights default to
    equal.
    """

    def __init__(self, returns, weights=None):
        self.returns = returns
        d = returns.dim
        if weights is None:
            weights = np.full(d, 1.0 / d)
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if self.weights.shape != (d,):
            raise ShapeError(
                f"weights of shape {self.weights.shape} do not match return dimension {d}"
            )

    def paired(self, theta, n, seed, lane_offset=0):
        theta = self._check_theta(theta)
        rows = sample(self.returns, n, seed, lane_offset).values
        port = rows @ self.weights
        return ScenarioSet(
            np.column_stack([-theta * port, -port]),
            seed=seed,
            origin=f"portfolio(dim={self.returns.dim})@{theta}",
        )


def parse_family(text: str) -> ParametricLoss:
    """CLI grammar: ``location:normal(0,1)``, ``scale:normal(0,1)``,
    ``portfolio:<scenario file>``."""
    tag, sep, rest = text.strip().partition(":")
    if not sep:
        raise ParameterError(f"cannot parse family {text!r}")
    tag = tag.strip().lower()
    rest = rest.strip()
    if tag == "location":
        return LocationFamily(parse_distribution(rest))
    if tag == "scale":
        return ScaleFamily(parse_distribution(rest))
    if tag == "portfolio":
        return PortfolioFamily(Empirical(read_scenarios(rest).values, origin=rest))
    raise ParameterError(f"unknown family {tag!r}")


@dataclass(frozen=True)
class DerivativeEstimate:
    """Two-stage pathwise derivative estimate with a CLT interval."""

    value: float
    stderr: float
    ci_lo: float
    ci_hi: float
    t_inner: float
    m: int
    n: int
    seed: int
    level: float


def default_stage1_size(n: int) -> int:
    """ceil(n^(3/2)): stage 1 must outgrow stage 2 for the CLT to hold."""
    return int(math.ceil(n**1.5))


def _two_stage(
    family: ParametricLoss,
    theta: float,
    n: int,
    m: int | None,
    seed: int,
    solve_inner,
    summand,
    level: float,
) -> DerivativeEstimate:
    if n < 1:
        raise ParameterError(f"stage-2 size must be positive, got {n}")
    if m is None:
        m = default_stage1_size(n)
    if m < n:
        raise ScheduleError(f"stage-1 size m={m} must be at least stage-2 size n={n}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0,1), got {level}")
    stage1 = family.paired(theta, m, seed, lane_offset=0)
    # the column view is strided; the inner solve makes many passes over it
    t_inner = solve_inner(np.ascontiguousarray(stage1.values[:, 0]))
    del stage1
    stage2 = family.paired(theta, n, seed, lane_offset=LANE_STRIDE)
    xi, dxi = stage2.values[:, 0], stage2.values[:, 1]
    terms = summand(xi, dxi, t_inner)
    value = float(np.mean(terms))
    stderr = float(np.std(terms, ddof=1)) / math.sqrt(n) if n > 1 else float("inf")
    half = float(ndtri(0.5 * (1.0 + level))) * stderr
    return DerivativeEstimate(
        value=value,
        stderr=stderr,
        ci_lo=value - half,
        ci_hi=value + half,
        t_inner=t_inner,
        m=m,
        n=n,
        seed=seed,
        level=level,
    )


def oce_derivative_estimate(
    loss: LossFunction,
    family: ParametricLoss,
    theta: float,
    n: int,
    m: int | None = None,
    seed: int = 0,
    level: float = 0.95,
    bracket: Bracket | None = None,
    tol: float = 1e-9,
) -> DerivativeEstimate:
    """Derivative of the OCE risk: mean of l'(xi - t*) xi' with a plug-in t*."""

    def solve_inner(values):
        return oce_estimate(loss, values, bracket, tol).t_star

    def summand(xi, dxi, t):
        return np.asarray(loss.deriv(xi - t), dtype=float) * dxi

    return _two_stage(family, theta, n, m, seed, solve_inner, summand, level)


def cvar_derivative_estimate(
    alpha: float,
    family: ParametricLoss,
    theta: float,
    n: int,
    m: int | None = None,
    seed: int = 0,
    level: float = 0.95,
    bracket: Bracket | None = None,
    tol: float = 1e-9,
) -> DerivativeEstimate:
    """CVaR specialization: averages the indicator form (1/alpha) 1{xi >= t} xi'."""
    loss = CvarLoss(alpha)

    def solve_inner(values):
        return oce_estimate(loss, values, bracket, tol).t_star

    def summand(xi, dxi, t):
        return np.where(xi - t >= 0.0, dxi / alpha, 0.0)

    return _two_stage(family, theta, n, m, seed, solve_inner, summand, level)


def sr_derivative_estimate(spec: ShortfallSpec, paired: ScenarioSet) -> float:
    """Shortfall-risk derivative: ratio of sample means at the plug-in root."""
    if paired.dim != 2:
        raise ShapeError(f"paired scenarios must have two columns, got {paired.dim}")
    xi = paired.values[:, 0]
    dxi = paired.values[:, 1]
    t, _ = sr_estimate_saa(spec, xi)
    d = np.asarray(spec.loss.deriv(xi - t), dtype=float)
    denom = float(np.mean(d))
    if denom < 1e-12:
        raise DegeneracyError(f"mean loss derivative {denom:.3e} too small for the ratio")
    return float(np.mean(d * dxi)) / denom
