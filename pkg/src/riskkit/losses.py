"""The convex nondecreasing regret family used by every risk measure.

Each loss exposes the closed form, its derivative (right derivative at
kinks, which keeps the sample-subgradient bisection deterministic), and,
where defined, the second derivative.  ``parse_loss`` implements the CLI
grammar: ``cvar:0.05``, ``pl:0.2,4.0``, ``entropic``, ``expsr``,
``power:2,0.05``, ``scvar:0.05,0.01``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ParameterError


class LossFunction:
    """Base class: convex, nondecreasing z -> l(z)."""

    tag: str = ""
    grade: str = ""  # "C0" | "C1" | "C2"
    oce_normalized: bool = False  # l(0)=0 and 1 in the subdifferential at 0
    has_deriv2: bool = False

    def eval(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def deriv2(self, z):
        raise CapabilityError(f"{self.tag} loss has no usable second derivative")

    def eval_scalar(self, z: float) -> float:
        """Fast scalar path for sequential recursions."""
        return float(self.eval(z))

    def mean_deriv(self, values: np.ndarray, t: float) -> float:
        """mean(l'(values - t)); hot loop of the sample-subgradient bisection.

        Step-derivative losses override this with a count, which evaluates
        the same number without materializing the shifted array.
        """
        return float(np.mean(self.deriv(values - t)))

    def spec(self) -> str:
        """Round-trippable CLI spec string."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec()!r})"


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0,1), got {alpha}")
    return float(alpha)


@dataclass(frozen=True, repr=False)
class CvarLoss(LossFunction):
    """l(z) = max(z,0)/alpha: the CVaR regret at tail level alpha."""

    alpha: float
    tag = "cvar"
    grade = "C0"
    oce_normalized = True

    def __post_init__(self):
        _check_alpha(self.alpha)

    def eval(self, z):
        return np.maximum(z, 0.0) / self.alpha

    def deriv(self, z):
        return np.where(np.asarray(z) >= 0.0, 1.0 / self.alpha, 0.0)

    def eval_scalar(self, z):
        return z / self.alpha if z > 0.0 else 0.0

    def mean_deriv(self, values, t):
        return np.count_nonzero(values >= t) / (values.size * self.alpha)

    def spec(self):
        return f"cvar:{self.alpha:g}"


@dataclass(frozen=True, repr=False)
class PiecewiseLinearLoss(LossFunction):
    """Two slopes through the origin: left_slope in [0,1), right_slope > 1.

    ``PiecewiseLinearLoss(0, 1/alpha)`` coincides with ``CvarLoss(alpha)``.
    """

    left_slope: float
    right_slope: float
    tag = "pl"
    grade = "C0"
    oce_normalized = True

    def __post_init__(self):
        if not 0.0 <= self.left_slope < 1.0:
            raise ParameterError(f"left slope must lie in [0,1), got {self.left_slope}")
        if not self.right_slope > 1.0:
            raise ParameterError(f"right slope must exceed 1, got {self.right_slope}")

    def eval(self, z):
        z = np.asarray(z, dtype=float)
        return self.right_slope * np.maximum(z, 0.0) + self.left_slope * np.minimum(z, 0.0)

    def deriv(self, z):
        return np.where(np.asarray(z) >= 0.0, self.right_slope, self.left_slope)

    def eval_scalar(self, z):
        return (self.right_slope if z > 0.0 else self.left_slope) * z

    def mean_deriv(self, values, t):
        above = np.count_nonzero(values >= t)
        return (above * self.right_slope + (values.size - above) * self.left_slope) / values.size

    def spec(self):
        return f"pl:{self.left_slope:g},{self.right_slope:g}"


@dataclass(frozen=True, repr=False)
class EntropicLoss(LossFunction):
    """l(z) = exp(z) - 1: generates the entropic risk measure."""

    tag = "entropic"
    grade = "C2"
    oce_normalized = True
    has_deriv2 = True

    def eval(self, z):
        return np.exp(z) - 1.0

    def deriv(self, z):
        return np.exp(z)

    def deriv2(self, z):
        return np.exp(z)

    def eval_scalar(self, z):
        return math.exp(z) - 1.0

    def spec(self):
        return "entropic"


@dataclass(frozen=True, repr=False)
class ExponentialShortfallLoss(LossFunction):
    """l(z) = exp(z): the classic shortfall-risk loss (not OCE-normalized)."""

    tag = "expsr"
    grade = "C2"
    has_deriv2 = True

    def eval(self, z):
        return np.exp(z)

    def deriv(self, z):
        return np.exp(z)

    def deriv2(self, z):
        return np.exp(z)

    def eval_scalar(self, z):
        return math.exp(z)

    def spec(self):
        return "expsr"


@dataclass(frozen=True, repr=False)
class PowerLoss(LossFunction):
    """l(z) = max(z,0)**p / alpha with p >= 1; p = 1 reproduces CVaR exactly."""

    p: float
    alpha: float
    tag = "power"

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ParameterError(f"power exponent must be >= 1, got {self.p}")
        _check_alpha(self.alpha)

    @property
    def grade(self):  # type: ignore[override]
        if self.p == 1.0:
            return "C0"
        return "C2" if self.p >= 2.0 else "C1"

    @property
    def oce_normalized(self):  # type: ignore[override]
        # for p > 1 the derivative at 0 is 0, so 1 is not a subgradient there
        return self.p == 1.0

    @property
    def has_deriv2(self):  # type: ignore[override]
        return self.p >= 2.0

    def eval(self, z):
        return np.maximum(z, 0.0) ** self.p / self.alpha

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        # 0**0 == 1 would otherwise leak the kink value onto z < 0
        return np.where(z >= 0.0, self.p * zp ** (self.p - 1.0) / self.alpha, 0.0)

    def deriv2(self, z):
        if not self.has_deriv2:
            raise CapabilityError(
                f"power loss with p={self.p} is only C1; no second derivative"
            )
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        return np.where(z >= 0.0, self.p * (self.p - 1.0) * zp ** (self.p - 2.0) / self.alpha, 0.0)

    def eval_scalar(self, z):
        return z**self.p / self.alpha if z > 0.0 else 0.0

    def spec(self):
        return f"power:{self.p:g},{self.alpha:g}"


@dataclass(frozen=True, repr=False)
class SmoothedCvarLoss(LossFunction):
    """CVaR regret with its kink replaced by a quadratic of half-width eps.

    Branches: 0 below -eps, (z^2/(4 eps) + z/2 + eps/4)/alpha on [-eps, eps],
    z/alpha above.  Dominates the CVaR regret by at most eps/(4 alpha), with
    equality at z = 0.
    """

    alpha: float
    eps: float
    tag = "scvar"
    grade = "C1"
    has_deriv2 = True  # piecewise-constant curvature; seams take the interior value

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not self.eps > 0.0:
            raise ParameterError(f"smoothing width must be positive, got {self.eps}")

    def eval(self, z):
        z = np.asarray(z, dtype=float)
        mid = (z * z / (4.0 * self.eps) + 0.5 * z + 0.25 * self.eps) / self.alpha
        return np.where(z >= self.eps, z / self.alpha, np.where(z >= -self.eps, mid, 0.0))

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        mid = (z / (2.0 * self.eps) + 0.5) / self.alpha
        return np.where(z >= self.eps, 1.0 / self.alpha, np.where(z >= -self.eps, mid, 0.0))

    def deriv2(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) <= self.eps, 1.0 / (2.0 * self.eps * self.alpha), 0.0)

    def eval_scalar(self, z):
        if z >= self.eps:
            return z / self.alpha
        if z >= -self.eps:
            return (z * z / (4.0 * self.eps) + 0.5 * z + 0.25 * self.eps) / self.alpha
        return 0.0

    def spec(self):
        return f"scvar:{self.alpha:g},{self.eps:g}"


def parse_loss(text: str) -> LossFunction:
    """Parse a loss spec string (see module docstring for the grammar)."""
    text = text.strip()
    tag, _, rest = text.partition(":")
    tag = tag.strip().lower()
    params: list[float] = []
    if rest.strip():
        try:
            params = [float(p) for p in rest.split(",")]
        except ValueError:
            raise ParameterError(f"cannot parse loss parameters in {text!r}") from None

    def need(k: int):
        if len(params) != k:
            raise ParameterError(f"loss {tag!r} takes {k} parameter(s), got {text!r}")

    if tag == "cvar":
        need(1)
        return CvarLoss(params[0])
    if tag == "pl":
        need(2)
        return PiecewiseLinearLoss(params[0], params[1])
    if tag == "entropic":
        need(0)
        return EntropicLoss()
    if tag == "expsr":
        need(0)
        return ExponentialShortfallLoss()
    if tag == "power":
        need(2)
        return PowerLoss(params[0], params[1])
    if tag == "scvar":
        need(2)
        return SmoothedCvarLoss(params[0], params[1])
    raise ParameterError(f"unknown loss {tag!r}")
