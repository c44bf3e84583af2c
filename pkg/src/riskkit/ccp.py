"""Chance-constrained programs under Gaussian mixture input.

Three layers:

* probability machinery: the gradient of ``Pr{B xi <= x}`` under a Gaussian
  (reduction to a one-dimensional density times a lower-dimensional normal
  probability), its mixture-weighted extension, and the exact closed form of
  the affine single constraint ``Pr{f0(x) + f(x).xi <= 0}`` via the standard
  normal CDF;
* a local solver: sequential linearization of the closed-form constraint
  with an elastic LP step and a shrinking trust region;
* a global solver: spatial branch-and-bound over the per-component
  probability box, each node bounded by a cutting-plane solve of the
  second-order-cone-shaped relaxation frozen at the node's lower corners.

Decision variables live in a bounded polyhedron (box plus optional linear
inequalities); all LP subproblems go through scipy's HiGHS.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import ndtr, ndtri

from ._kvfile import load_kv, parse_blocks, parse_matrix, parse_vector
from ._rng import derive_seed
from .distributions import (
    GaussianMixture,
    MultivariateNormal,
    RectProbEstimate,
    mvn_rect_prob,
    psd_factor,
)
from .errors import (
    CapabilityError,
    ConvergenceWarning,
    ConvexityDomainError,
    DegeneracyError,
    InfeasibleError,
    MatrixError,
    NondegeneracyError,
    ParameterError,
    ScenarioParseError,
    ShapeError,
)

_ACTIVE_TOL = 1e-8


def joint_to_single(costs):
    """Reduce a joint system to one cost: the pointwise maximum."""
    costs = list(costs)
    if not costs:
        raise ParameterError("need at least one cost function")
    if len(costs) == 1:
        return costs[0]

    def combined(*args, **kwargs):
        values = [np.asarray(c(*args, **kwargs), dtype=float) for c in costs]
        out = values[0]
        for v in values[1:]:
            out = np.maximum(out, v)
        return out

    return combined


# ------------------------------------------------------------ HM gradient


@dataclass(frozen=True)
class GradientEstimate:
    """Gradient vector with the Monte Carlo standard error of each entry."""

    gradient: np.ndarray
    stderr: np.ndarray


def _normal_pdf(x: float, mean: float, var: float) -> float:
    return math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def hm_gradient(B, x, mean, cov, prob_tol: float = 1e-3, seed: int = 0) -> GradientEstimate:
    """Gradient of x -> Pr{B xi <= x} for xi ~ N(mean, cov), cov positive definite.

    Component i is the 1-D density of b_i.xi at x_i times the probability of
    the remaining system conditioned on that face, evaluated through the
    rank-(k-1) factor of the conditional covariance.  Requires the system
    ``B z <= x`` to be nondegenerate (active rows linearly independent).
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    m, k = B.shape
    if x.shape != (m,):
        raise ShapeError(f"x of shape {x.shape} does not match {m} rows")
    if mean.shape != (k,) or cov.shape != (k, k):
        raise ShapeError("mean/cov dimensions do not match B columns")
    w_eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if w_eig[0] <= 1e-12 * max(w_eig[-1], 1.0):
        raise MatrixError("gradient reduction requires a positive definite covariance")

    grad = np.zeros(m)
    se = np.zeros(m)
    for i in range(m):
        b = B[i]
        s_ii = float(b @ cov @ b)
        if s_ii <= 0.0:
            raise MatrixError(f"row {i} has nonpositive variance b.cov.b = {s_ii:.3e}")
        shift = cov @ b
        w_i = mean + (x[i] - float(b @ mean)) / s_ii * shift
        # nondegeneracy at the conditioning point of face i
        resid = B @ w_i - x
        active = np.abs(resid) <= _ACTIVE_TOL * max(1.0, float(np.abs(x).max()))
        rows = B[active]
        if np.linalg.matrix_rank(rows, tol=1e-10) < rows.shape[0]:
            raise NondegeneracyError(
                f"active rows at face {i} are linearly dependent; system is degenerate"
            )
        g_i = _normal_pdf(float(x[i]), float(b @ mean), s_ii)
        if m == 1:
            grad[i], se[i] = g_i, 0.0
            continue
        S_i = cov - np.outer(shift, shift) / s_ii
        L_i, _, _ = psd_factor(S_i)
        keep = np.arange(m) != i
        C = B[keep] @ L_i
        u = x[keep] - B[keep] @ w_i
        rect = mvn_rect_prob(
            np.zeros(m - 1), C @ C.T, u, rel_tol=prob_tol, seed=derive_seed(seed, i)
        )
        grad[i] = g_i * rect.probability
        se[i] = g_i * rect.stderr
    return GradientEstimate(gradient=grad, stderr=se)


# ------------------------------------------------ mixture polytope system


class PolytopeChanceSystem:
    """Pr{B xi <= x} with xi following a multivariate normal or a mixture."""

    def __init__(self, B, distribution):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        if isinstance(distribution, MultivariateNormal):
            self._parts = [(1.0, distribution.mean, distribution.cov)]
        elif isinstance(distribution, GaussianMixture):
            self._parts = [
                (float(distribution.weights[j]), distribution.means[j], distribution.covs[j])
                for j in range(distribution.n_components)
            ]
        else:
            raise ParameterError(
                f"distribution must be MultivariateNormal or GaussianMixture, got {distribution!r}"
            )
        k = self.B.shape[1]
        if any(mu.shape != (k,) for _, mu, _ in self._parts):
            raise ShapeError("distribution dimension does not match B columns")
        self.distribution = distribution

    @property
    def dim(self) -> int:
        return self.B.shape[0]


def _with_component_context(j, exc):
    return type(exc)(f"component {j}: {exc}")


def gmm_poly_prob(system: PolytopeChanceSystem, x, rel_tol: float = 1e-3, seed: int = 0) -> RectProbEstimate:
    """Mixture probability: the weight-averaged per-component rectangle
    probabilities, each evaluated with the caller's seed (so the identity
    with separate per-component calls is exact)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = 0.0
    stderr = 0.0
    n_max = 0
    exhausted = False
    for j, (w, mu, covj) in enumerate(system._parts):
        if w == 0.0:
            continue
        try:
            rect = mvn_rect_prob(system.B @ mu, system.B @ covj @ system.B.T, x,
                                 rel_tol=rel_tol, seed=seed)
        except (MatrixError, ShapeError) as exc:
            raise _with_component_context(j, exc) from exc
        total += w * rect.probability
        stderr += w * rect.stderr
        n_max = max(n_max, rect.n_samples)
        exhausted = exhausted or rect.budget_exhausted
    return RectProbEstimate(total, stderr, n_max, exhausted)


def gmm_poly_grad(system: PolytopeChanceSystem, x, prob_tol: float = 1e-3, seed: int = 0) -> GradientEstimate:
    """Mixture gradient: weight-averaged per-component gradients."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.zeros(system.dim)
    se = np.zeros(system.dim)
    for j, (w, mu, covj) in enumerate(system._parts):
        if w == 0.0:
            continue
        try:
            part = hm_gradient(system.B, x, mu, covj, prob_tol=prob_tol, seed=seed)
        except (MatrixError, ShapeError, NondegeneracyError) as exc:
            raise _with_component_context(j, exc) from exc
        grad += w * part.gradient
        se += w * part.stderr
    return GradientEstimate(gradient=grad, stderr=se)


# -------------------------------------------- affine single chance constraint


class LinearChanceConstraint:
    """Pr{f0(x) + f(x).xi <= 0} >= 1 - alpha with f0, f affine in x.

    ``f0(x) = c0.x + d0`` and ``f(x) = A x + a`` with values in the mixture's
    space; the probability has the exact closed form
    ``sum_j pi_j Phi(-(f0 + f.mu_j) / sqrt(f.Sigma_j f))``.
    """

    def __init__(self, c0, d0, A, a, gmm: GaussianMixture, alpha: float):
        self.c0 = np.atleast_1d(np.asarray(c0, dtype=float))
        self.d0 = float(d0)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        if not 0.0 < alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0,1), got {alpha}")
        self.alpha = float(alpha)
        if not isinstance(gmm, GaussianMixture):
            raise ParameterError("constraint needs a GaussianMixture input model")
        self.gmm = gmm
        k = gmm.dim
        m = self.c0.shape[0]
        if self.A.shape != (k, m):
            raise ShapeError(f"f.A of shape {self.A.shape}, expected ({k}, {m})")
        if self.a.shape != (k,):
            raise ShapeError(f"f.a of shape {self.a.shape}, expected ({k},)")

    @property
    def dim(self) -> int:
        return self.c0.shape[0]

    def coeffs(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return float(self.c0 @ x + self.d0), self.A @ x + self.a


def linear_cc_value(lcc: LinearChanceConstraint, x) -> float:
    """Exact probability of the affine constraint at x."""
    f0, f = lcc.coeffs(x)
    total = 0.0
    for j in range(lcc.gmm.n_components):
        w = lcc.gmm.weights[j]
        num = f0 + float(f @ lcc.gmm.means[j])
        var = float(f @ lcc.gmm.covs[j] @ f)
        if var <= 1e-14:
            if num <= 0.0:
                total += w
                continue
            raise DegeneracyError(
                f"component {j}: variance {var:.3e} vanished with positive margin {num:.3e}"
            )
        total += w * float(ndtr(-num / math.sqrt(var)))
    return total


def linear_cc_grad(lcc: LinearChanceConstraint, x) -> np.ndarray:
    """Exact gradient of :func:`linear_cc_value` by the chain rule."""
    f0, f = lcc.coeffs(x)
    grad = np.zeros(lcc.dim)
    for j in range(lcc.gmm.n_components):
        w = lcc.gmm.weights[j]
        if w == 0.0:
            continue
        mu, covj = lcc.gmm.means[j], lcc.gmm.covs[j]
        num = f0 + float(f @ mu)
        var = float(f @ covj @ f)
        if var <= 1e-14:
            if num <= 0.0:
                continue  # deterministic component: flat contribution
            raise DegeneracyError(
                f"component {j}: variance {var:.3e} vanished with positive margin {num:.3e}"
            )
        sigma = math.sqrt(var)
        r = -num / sigma
        d_num = lcc.c0 + lcc.A.T @ mu
        d_sigma = (lcc.A.T @ (covj @ f)) / sigma
        d_r = -(d_num * sigma - num * d_sigma) / var
        grad += w * _std_normal_pdf(r) * d_r
    return grad


def _std_normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# ----------------------------------------------------------- feasible sets


class Polyhedron:
    """Bounded feasible region: box [lower, upper] plus optional A x <= b."""

    def __init__(self, lower, upper, A=None, b=None):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ShapeError("box bounds must have equal length")
        if np.any(self.lower > self.upper):
            raise ParameterError("box lower bound exceeds upper bound")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ParameterError("the box must be bounded")
        if (A is None) != (b is None):
            raise ParameterError("A and b must be given together")
        self.A = None if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        self.b = None if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if self.A is not None:
            if self.A.shape[1] != self.dim or self.b.shape != (self.A.shape[0],):
                raise ShapeError("inequality shapes do not match the box dimension")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        if self.A is not None and np.any(self.A @ x > self.b + tol):
            return False
        return True

    def chebyshev_center(self) -> np.ndarray:
        """Interior starting point: center of the largest inscribed ball."""
        m = self.dim
        rows = []
        rhs = []
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            rows.append(np.append(e, 1.0))
            rhs.append(self.upper[i])
            rows.append(np.append(-e, 1.0))
            rhs.append(-self.lower[i])
        if self.A is not None:
            for row, bi in zip(self.A, self.b):
                rows.append(np.append(row, float(np.linalg.norm(row))))
                rhs.append(bi)
        c = np.zeros(m + 1)
        c[-1] = -1.0
        res = linprog(
            c,
            A_ub=np.vstack(rows),
            b_ub=np.asarray(rhs),
            bounds=[(None, None)] * m + [(0.0, None)],
            method="highs",
        )
        if res.status != 0:
            raise ParameterError("feasible region is empty")
        return res.x[:m]


@dataclass(frozen=True)
class CcpProblem:
    """Minimize c.x over a bounded polyhedron subject to one chance constraint."""

    objective: np.ndarray
    region: Polyhedron
    constraint: LinearChanceConstraint

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.objective, dtype=float))
        object.__setattr__(self, "objective", c)
        if c.shape != (self.region.dim,):
            raise ShapeError("objective length does not match the region dimension")
        if self.constraint.dim != self.region.dim:
            raise ShapeError("constraint dimension does not match the region dimension")


def _solve_lp(c, A_ub, b_ub, bounds):
    res = linprog(
        c,
        A_ub=None if A_ub is None or len(A_ub) == 0 else np.vstack(A_ub),
        b_ub=None if b_ub is None or len(b_ub) == 0 else np.asarray(b_ub, dtype=float),
        bounds=bounds,
        method="highs",
    )
    return res


# ------------------------------------------------------------ local solver


@dataclass(frozen=True)
class LocalSolveResult:
    x: np.ndarray
    value: float
    probability: float
    residual: float
    iterations: int
    status: str


def ccp_solve_local(
    problem: CcpProblem,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> LocalSolveResult:
    """Sequential linearization of the closed-form chance constraint.

    Phase 1 climbs the probability (linearized ascent in a shrinking trust
    region) until the constraint holds; a collapsed trust region with the
    constraint still violated raises :class:`InfeasibleError` carrying the
    maximum probability reached.  Phase 2 minimizes the objective through an
    elastic LP (penalty on linearized constraint slack), tracking the best
    iterate whose exact probability is within ``tol`` of the target.  The
    reported residual is the last trust-region step length plus any
    constraint shortfall.
    """
    lcc = problem.constraint
    target = 1.0 - lcc.alpha
    region = problem.region
    c = problem.objective
    m = region.dim
    full_radius = float(np.max(region.upper - region.lower))
    # exact-penalty weight: kept just above the constraint multiplier (grown
    # on demand); an oversized penalty would shrink accepted steps to
    # |c|/(penalty * curvature) and stall on curved boundaries
    penalty = 10.0 * (1.0 + float(np.linalg.norm(c)))

    def prob_at(xx) -> float:
        return linear_cc_value(lcc, xx)

    def region_rows(x):
        A_ub, b_ub = [], []
        if region.A is not None:
            for row, bi in zip(region.A, region.b):
                A_ub.append(np.asarray(row, dtype=float))
                b_ub.append(float(bi) - float(row @ x))
        return A_ub, b_ub

    def trust_bounds(x, radius):
        lo_d = np.maximum(region.lower - x, -radius)
        hi_d = np.minimum(region.upper - x, radius)
        return [(lo_d[i], hi_d[i]) for i in range(m)]

    x = region.chebyshev_center()
    v = prob_at(x)
    best_prob = v
    iterations = 0

    # phase 1: restore feasibility by linearized probability ascent
    radius = 0.5 * full_radius
    while v < target - tol and iterations < max_iter:
        iterations += 1
        grad = linear_cc_grad(lcc, x)
        A_ub, b_ub = region_rows(x)
        res = _solve_lp(-grad, [r for r in A_ub], b_ub, trust_bounds(x, radius))
        if res.status != 0:
            raise ParameterError(f"restoration LP failed with status {res.status}")
        candidate = x + res.x
        v_cand = prob_at(candidate)
        if v_cand > v + 1e-15:
            x, v = candidate, v_cand
            best_prob = max(best_prob, v)
            radius = min(2.0 * radius, full_radius)
        else:
            radius *= 0.5
            if radius < 1e-13:
                break
    if v < target - tol:
        raise InfeasibleError(
            f"no feasible point found; maximum achieved probability {best_prob:.6g} "
            f"is short of target {target:.6g}",
            x=x,
            best_probability=best_prob,
        )

    # phase 2: elastic sequential linear programming from the feasible point
    def merit(xx) -> float:
        return float(c @ xx) + penalty * max(0.0, target - prob_at(xx))

    best_x, best_val = x.copy(), float(c @ x)
    radius = 0.25 * full_radius
    step_norm = math.inf
    status = "max_iter"
    while iterations < max_iter:
        iterations += 1
        v = prob_at(x)
        grad = linear_cc_grad(lcc, x)
        A_ub, b_ub = region_rows(x)
        A_el = [np.append(-grad, -1.0)] + [np.append(row, 0.0) for row in A_ub]
        b_el = [v - target] + b_ub
        bounds = trust_bounds(x, radius) + [(0.0, None)]
        res = _solve_lp(np.append(c, penalty), A_el, b_el, bounds)
        if res.status != 0:
            raise ParameterError(f"trust-region LP failed with status {res.status}")
        d = res.x[:m]
        slack = float(res.x[m])
        if slack > 1e-10 and v >= target - tol and penalty < 1e8:
            penalty *= 10.0  # elastic active from a feasible point: weight too small
            continue
        step_norm = float(np.max(np.abs(d))) if m else 0.0
        if step_norm <= tol and v >= target - tol:
            status = "optimal"
            break
        candidate = x + d
        if merit(candidate) <= merit(x) - 1e-13 * (1.0 + abs(merit(x))):
            x = candidate
            v_cand = prob_at(x)
            if v_cand >= target - tol and float(c @ x) < best_val:
                best_x, best_val = x.copy(), float(c @ x)
            radius = min(2.0 * radius, full_radius)
        else:
            radius *= 0.5
            if radius < max(tol * 1e-3, 1e-14):
                status = "optimal" if v >= target - tol else status
                break

    if prob_at(x) >= target - tol and float(c @ x) < best_val:
        best_x, best_val = x.copy(), float(c @ x)
    prob = prob_at(best_x)
    if status != "optimal":
        warnings.warn(
            "local solve hit the iteration budget; best iterate returned",
            ConvergenceWarning,
            stacklevel=2,
        )
    return LocalSolveResult(
        x=best_x,
        value=best_val,
        probability=prob,
        residual=max(step_norm, max(0.0, target - prob)),
        iterations=iterations,
        status=status,
    )


# ------------------------------------------------------------- BnB machinery


@dataclass(frozen=True)
class YRectangle:
    """Per-component probability bounds of one branch-and-bound node."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise ShapeError("rectangle bounds must have equal length")
        if np.any(lo > hi) or np.any(lo <= 0.0) or np.any(hi > 1.0):
            raise ParameterError("rectangle needs 0 < lower <= upper <= 1")

    def longest_edge(self) -> int:
        return int(np.argmax(self.upper - self.lower))

    def split(self) -> tuple["YRectangle", "YRectangle"]:
        j = self.longest_edge()
        mid = 0.5 * (self.lower[j] + self.upper[j])
        lo_child_hi = self.upper.copy()
        lo_child_hi[j] = mid
        hi_child_lo = self.lower.copy()
        hi_child_lo[j] = mid
        return YRectangle(self.lower, lo_child_hi), YRectangle(hi_child_lo, self.upper)


@dataclass(frozen=True)
class NodeResult:
    """Outcome of one bounding subproblem."""

    value: float
    x: np.ndarray | None
    y: np.ndarray | None
    feasible: bool
    status: str  # "solved" | "infeasible"


def _node_constraint_data(lcc: LinearChanceConstraint, z_lower: np.ndarray):
    """Per-component pieces of the frozen second-order-cone constraints."""
    parts = []
    for j in range(lcc.gmm.n_components):
        R, _, _ = psd_factor(lcc.gmm.covs[j])
        parts.append((float(z_lower[j]), R.T, lcc.gmm.means[j]))
    return parts


def bnb_lower_bound(
    problem: CcpProblem,
    rect: YRectangle,
    tol: float = 1e-8,
    max_cuts: int = 200,
) -> NodeResult:
    """Bounding subproblem of one node: freeze each cone multiplier at
    ``quantile(lower_j)`` and minimize the objective by cutting planes.

    Requires every frozen quantile to be nonnegative (lower corners at least
    one half); raises :class:`ConvexityDomainError` otherwise.  The value is
    a valid lower bound for the node even if the cut budget runs out, since
    dropping cuts only relaxes the problem.
    """
    lcc = problem.constraint
    region = problem.region
    K = lcc.gmm.n_components
    if rect.lower.shape != (K,):
        raise ShapeError(f"rectangle has {rect.lower.shape[0]} components, mixture has {K}")
    if np.any(rect.lower < 0.5):
        raise ConvexityDomainError(
            "node lower corner below 1/2 puts the frozen quantile below 0; "
            "the cone constraints would lose convexity"
        )
    if float(lcc.gmm.weights @ rect.upper) < 1.0 - lcc.alpha - 1e-15:
        return NodeResult(math.inf, None, None, False, "infeasible")

    z_lower = ndtri(rect.lower)
    parts = _node_constraint_data(lcc, z_lower)
    m = region.dim
    c = problem.objective
    bounds = [(region.lower[i], region.upper[i]) for i in range(m)]
    A_ub: list[np.ndarray] = []
    b_ub: list[float] = []
    if region.A is not None:
        for row, bi in zip(region.A, region.b):
            A_ub.append(np.asarray(row, dtype=float))
            b_ub.append(float(bi))

    def cone_values(x):
        f0, f = lcc.coeffs(x)
        vals = np.empty(K)
        for j, (z, Rt, mu) in enumerate(parts):
            vals[j] = z * float(np.linalg.norm(Rt @ f)) + f0 + float(f @ mu)
        return vals

    def cone_cut(x, j):
        f0, f = lcc.coeffs(x)
        z, Rt, mu = parts[j]
        rf = Rt @ f
        norm = float(np.linalg.norm(rf))
        grad = lcc.c0 + lcc.A.T @ mu
        if norm > 0.0:
            grad = grad + z * (lcc.A.T @ (Rt.T @ rf)) / norm
        value = z * norm + f0 + float(f @ mu)
        return grad, float(grad @ x) - value

    x = None
    for _ in range(max_cuts):
        res = _solve_lp(c, A_ub, b_ub, bounds)
        if res.status == 2:
            return NodeResult(math.inf, None, None, False, "infeasible")
        if res.status != 0:
            raise ParameterError(f"node LP failed with status {res.status}")
        x = res.x
        vals = cone_values(x)
        worst = float(np.max(vals))
        if worst <= tol:
            break
        for j in np.flatnonzero(vals > tol / 10.0):
            grad, rhs = cone_cut(x, int(j))
            A_ub.append(grad)
            b_ub.append(rhs)
    value = float(c @ x)
    # 1e-12 absorbs roundoff when the relaxation solution sits exactly on the
    # probability boundary (always the case for K=1)
    feasible = linear_cc_value(lcc, x) >= 1.0 - lcc.alpha - 1e-12
    return NodeResult(value=value, x=x, y=rect.upper.copy(), feasible=feasible, status="solved")


def _polish_to_feasibility(lcc: LinearChanceConstraint, region: Polyhedron, x, max_steps: int = 60):
    """Nudge a near-feasible point across the probability boundary."""
    target = 1.0 - lcc.alpha
    x = np.asarray(x, dtype=float).copy()
    for _ in range(max_steps):
        v = linear_cc_value(lcc, x)
        if v >= target:
            return x if region.contains(x, tol=1e-9) else None
        grad = linear_cc_grad(lcc, x)
        gg = float(grad @ grad)
        if gg <= 1e-300:
            return None
        # Newton step on the probability, slightly overshooting the boundary
        x = x + ((target - v) * 1.0000001 + 1e-16) / gg * grad
        x = np.clip(x, region.lower, region.upper)
    return None


@dataclass
class BnbAuditEvent:
    kind: str  # "expand" | "prune_bound" | "prune_infeasible" | "incumbent" | "gap_prune"
    bound: float
    incumbent: float


@dataclass
class BnbResult:
    x: np.ndarray | None
    value: float
    gap: float
    nodes: int
    status: str  # "optimal" | "budget_exhausted"
    probability: float
    audit: list[BnbAuditEvent] = field(default_factory=list)


def ccp_solve_bnb(
    problem: CcpProblem,
    eps_gap: float = 1e-4,
    node_budget: int = 2000,
    tol: float = 1e-8,
) -> BnbResult:
    """Spatial branch-and-bound over the per-component probability box.

    Exact mode: requires ``alpha <= min_j pi_j / 2`` so every node's lower
    corners stay at or above one half and the frozen cone constraints remain
    convex.  Nodes are selected best-first (smallest bound) and split along
    their longest edge; a node whose relaxation solution already satisfies
    the exact constraint closes itself and updates the incumbent.
    """
    lcc = problem.constraint
    weights = lcc.gmm.weights
    if np.any(weights <= 0.0):
        raise ParameterError(
            "branch-and-bound needs strictly positive mixture weights; "
            "drop zero-weight components first"
        )
    pi_min = float(weights.min())
    if lcc.alpha > 0.5 * pi_min + 1e-15:
        raise CapabilityError(
            f"exact mode requires alpha <= pi_min/2 = {0.5 * pi_min:.6g}, got alpha = {lcc.alpha}"
        )
    K = lcc.gmm.n_components
    root = YRectangle(np.maximum(0.5, 1.0 - lcc.alpha / weights), np.ones(K))

    audit: list[BnbAuditEvent] = []
    incumbent = math.inf
    x_best: np.ndarray | None = None
    heap: list[tuple[float, int, YRectangle]] = []
    counter = 0
    nodes = 0

    target = 1.0 - lcc.alpha

    def offer(result: NodeResult, rect: YRectangle):
        nonlocal incumbent, x_best, counter
        if result.status == "infeasible":
            audit.append(BnbAuditEvent("prune_infeasible", math.inf, incumbent))
            return
        v = linear_cc_value(lcc, result.x)
        # every exactly-feasible point is an upper bound; near-boundary node
        # solutions are nudged across so the final incumbent is exact
        candidate = None
        if v >= target:
            candidate = result.x
        elif v >= target - 1e-6:
            candidate = _polish_to_feasibility(lcc, problem.region, result.x)
        solved = False
        if candidate is not None:
            cand_value = float(problem.objective @ candidate)
            if cand_value < incumbent:
                incumbent = cand_value
                x_best = candidate
                audit.append(BnbAuditEvent("incumbent", cand_value, incumbent))
            solved = v >= target - 1e-12  # bound equals a feasible value
        if solved:
            return
        if result.value >= incumbent - eps_gap:
            audit.append(BnbAuditEvent("prune_bound", result.value, incumbent))
            return
        counter += 1
        heapq.heappush(heap, (result.value, counter, rect))

    nodes += 1
    root_result = bnb_lower_bound(problem, root, tol=tol)
    if root_result.status == "infeasible":
        raise InfeasibleError("the root relaxation is infeasible; the problem has no solution")
    offer(root_result, root)

    status = "optimal"
    while heap:
        bound, _, rect = heapq.heappop(heap)
        if bound >= incumbent - eps_gap:
            audit.append(BnbAuditEvent("gap_prune", bound, incumbent))
            heap.clear()
            break
        if nodes >= node_budget:
            heapq.heappush(heap, (bound, -1, rect))
            status = "budget_exhausted"
            break
        audit.append(BnbAuditEvent("expand", bound, incumbent))
        for child in rect.split():
            nodes += 1
            offer(bnb_lower_bound(problem, child, tol=tol), child)

    open_bounds = [entry[0] for entry in heap]
    lower = min(open_bounds) if open_bounds else incumbent
    gap = max(0.0, incumbent - lower)
    if status == "budget_exhausted":
        warnings.warn(
            f"node budget {node_budget} exhausted at gap {gap:.3g} > eps_gap {eps_gap:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    if x_best is None:
        raise InfeasibleError(
            "no feasible incumbent found within the node budget", best_probability=None
        )
    return BnbResult(
        x=x_best,
        value=incumbent,
        gap=gap,
        nodes=nodes,
        status=status,
        probability=linear_cc_value(lcc, x_best),
        audit=audit,
    )


# ------------------------------------------------------------- problem files


def read_problem(path) -> CcpProblem:
    """Load a CCP from its key-value problem file.

    Keys: ``objective.c``, ``X.box`` (one ``lo,hi`` row per dimension),
    optional ``X.A`` / ``X.b``, ``constraint.f0.c0`` / ``constraint.f0.d0``,
    ``constraint.f.A`` / ``constraint.f.a``, ``gmm.weights`` / ``gmm.means``
    / ``gmm.covs``, ``alpha``.
    """
    entries = load_kv(path)

    def need(key):
        if key not in entries:
            raise ScenarioParseError(f"{path}: missing key {key!r}")
        return entries[key]

    c = parse_vector(*need("objective.c"))
    box = parse_matrix(*need("X.box"))
    if box.shape[1] != 2:
        raise ScenarioParseError(f"{path}: X.box rows must be 'lo,hi' pairs")
    A = b = None
    if "X.A" in entries:
        A = parse_matrix(*entries["X.A"])
        b = parse_vector(*need("X.b"))
    region = Polyhedron(box[:, 0], box[:, 1], A, b)

    c0 = parse_vector(*need("constraint.f0.c0"))
    d0_text, d0_line = need("constraint.f0.d0")
    d0 = parse_vector(d0_text, d0_line)
    if d0.shape != (1,):
        raise ScenarioParseError(f"{path}: constraint.f0.d0 must be a scalar", d0_line)
    fA = parse_matrix(*need("constraint.f.A"))
    fa = parse_vector(*need("constraint.f.a"))

    weights = parse_vector(*need("gmm.weights"))
    means = parse_matrix(*need("gmm.means"))
    blocks = parse_blocks(*need("gmm.covs"))
    if len(blocks) != weights.shape[0]:
        raise ScenarioParseError(f"{path}: covariance block count does not match weights")
    gmm = GaussianMixture(weights, means, np.array(blocks))

    alpha_text, alpha_line = need("alpha")
    alpha = parse_vector(alpha_text, alpha_line)
    if alpha.shape != (1,):
        raise ScenarioParseError(f"{path}: alpha must be a scalar", alpha_line)

    constraint = LinearChanceConstraint(c0, float(d0[0]), fA, fa, gmm, float(alpha[0]))
    return CcpProblem(objective=c, region=region, constraint=constraint)
