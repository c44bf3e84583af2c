"""Seeded sampling from named distributions and exact probability kernels.

Distributions are immutable parameter records; :func:`sample` turns any of
them into a :class:`ScenarioSet` of i.i.d. rows.  The draw for row ``i``
depends only on ``(seed, i)`` through counter-based substreams, so scenario
sets are reproducible independently of batching or worker count: row ``i`` of
``sample(dist, n, seed)`` is the same for every ``n > i``.

Lane layout per index: lane 0 selects the mixture component (or bootstrap
row), lane 1 carries the Gaussian/base variates.  A single-component mixture
therefore reproduces plain multivariate-normal sampling exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import _rng
from ._kvfile import load_kv, parse_blocks, parse_matrix, parse_vector
from .errors import (
    BudgetWarning,
    DataError,
    DomainError,
    MatrixError,
    ParameterError,
    ScenarioParseError,
    ShapeError,
)

import warnings

LANE_COMPONENT = 0
LANE_GAUSS = 1
# lane stride between logically independent consumers of one seed (e.g. the
# two stages of a two-stage estimator)
LANE_STRIDE = 8

_PSD_RTOL = 1e-10


def std_normal_cdf(x):
    """Standard normal distribution function, elementwise."""
    return ndtr(x)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf`; requires p in (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError(f"quantile requires p in (0,1), got {p}")
    out = ndtri(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def _check_symmetric(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeError(f"covariance must be square, got shape {cov.shape}")
    scale = np.abs(cov).max() if cov.size else 0.0
    if np.abs(cov - cov.T).max(initial=0.0) > 1e-8 * max(scale, 1.0):
        raise MatrixError("covariance matrix is not symmetric")
    return 0.5 * (cov + cov.T)


def psd_factor(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-revealing square root of a symmetric PSD matrix.

    Returns ``(L, eigvals, eigvecs)`` with ``L`` of shape ``(d, r)`` such
    that ``L @ L.T`` reproduces the matrix; eigenvalues below
    ``1e-10 * max_eigenvalue`` are treated as zero and dropped.  Raises
    :class:`MatrixError` when the most negative eigenvalue is beyond that
    tolerance.
    """
    cov = _check_symmetric(cov)
    w, v = np.linalg.eigh(cov)
    wmax = float(w[-1]) if w.size else 0.0
    floor = _PSD_RTOL * max(wmax, 0.0)
    if w.size and float(w[0]) < -max(floor, 1e-300):
        raise MatrixError(
            f"covariance is not positive semidefinite (min eigenvalue {w[0]:.3e})"
        )
    keep = w > floor
    L = v[:, keep] * np.sqrt(w[keep])
    return L, w, v


@dataclass(frozen=True)
class Normal:
    """Univariate normal N(mean, stddev^2)."""

    mean: float
    stddev: float

    def __post_init__(self):
        if not (self.stddev > 0.0 and math.isfinite(self.stddev)):
            raise ParameterError(f"stddev must be positive, got {self.stddev}")

    @property
    def dim(self) -> int:
        return 1

    def _sample_rows(self, seed, indices, lane_offset=0):
        u = _rng.uniforms(seed, indices, lane_offset + LANE_GAUSS, 1)
        return self.mean + self.stddev * ndtri(u)


@dataclass(frozen=True)
class LogNormal:
    """exp(N(mu, sigma^2))."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ParameterError(f"sigma must be positive, got {self.sigma}")

    @property
    def dim(self) -> int:
        return 1

    def _sample_rows(self, seed, indices, lane_offset=0):
        u = _rng.uniforms(seed, indices, lane_offset + LANE_GAUSS, 1)
        return np.exp(self.mu + self.sigma * ndtri(u))


class MultivariateNormal:
    """N(mean, cov) with symmetric PSD covariance (rank deficiency allowed)."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if self.mean.ndim != 1:
            raise ShapeError("mean must be a vector")
        if cov.shape != (self.mean.shape[0],) * 2:
            raise ShapeError(
                f"covariance shape {cov.shape} does not match mean of length {self.mean.shape[0]}"
            )
        self.cov = _check_symmetric(cov)
        self._factor, _, _ = psd_factor(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __repr__(self):
        return f"MultivariateNormal(dim={self.dim})"

    def _sample_rows(self, seed, indices, lane_offset=0):
        d = self.dim
        u = _rng.uniforms(seed, indices, lane_offset + LANE_GAUSS, d)
        z = ndtri(u)
        r = self._factor.shape[1]
        return self.mean + z[:, :r] @ self._factor.T


class GaussianMixture:
    """Weighted mixture of multivariate normals: the CCP input model.

    ``weights`` must be nonnegative and sum to 1 within 1e-12; every
    component covariance must be symmetric PSD.  Scalars are accepted for
    univariate mixtures (means of shape (K,), covariances of shape (K,)).
    """

    def __init__(self, weights, means, covs):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ParameterError("weights must be a nonempty vector")
        if np.any(self.weights < 0.0):
            raise ParameterError("mixture weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ParameterError(
                f"mixture weights must sum to 1 within 1e-12, got sum {self.weights.sum()!r}"
            )
        K = self.weights.shape[0]
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means.reshape(K, 1)
        if means.ndim != 2 or means.shape[0] != K:
            raise ShapeError(f"means must have shape (K, d), got {means.shape}")
        self.means = means
        d = means.shape[1]
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 1:
            covs = covs.reshape(K, 1, 1)
        if covs.shape != (K, d, d):
            raise ShapeError(f"covariances must have shape (K, d, d), got {covs.shape}")
        self.covs = covs
        self._spectra = []
        self._factors = []
        for j in range(K):
            L, w, v = psd_factor(covs[j])
            self._factors.append(L)
            self._spectra.append((w, v))
        self._cumweights = np.cumsum(self.weights)
        self._cumweights[-1] = 1.0

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def component(self, j: int) -> MultivariateNormal:
        return MultivariateNormal(self.means[j], self.covs[j])

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, dim={self.dim})"

    def _sample_rows(self, seed, indices, lane_offset=0):
        d = self.dim
        u_comp = _rng.uniforms(seed, indices, lane_offset + LANE_COMPONENT, 1)[:, 0]
        comp = np.searchsorted(self._cumweights, u_comp, side="left")
        comp = np.minimum(comp, self.n_components - 1)
        z = ndtri(_rng.uniforms(seed, indices, lane_offset + LANE_GAUSS, d))
        out = np.empty((indices.shape[0] if hasattr(indices, "shape") else len(indices), d))
        for j in range(self.n_components):
            mask = comp == j
            if not np.any(mask):
                continue
            L = self._factors[j]
            out[mask] = self.means[j] + z[mask, : L.shape[1]] @ L.T
        return out


class Empirical:
    """Point-mass distribution on recorded rows; sampling bootstraps them."""

    def __init__(self, values, origin: str = ""):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] == 0:
            raise DataError("empirical distribution needs at least one row")
        if not np.all(np.isfinite(values)):
            raise DataError("empirical rows must be finite")
        self.values = values
        self.origin = origin

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __repr__(self):
        return f"Empirical(n={self.values.shape[0]}, dim={self.dim})"

    def _sample_rows(self, seed, indices, lane_offset=0):
        u = _rng.uniforms(seed, indices, lane_offset + LANE_COMPONENT, 1)[:, 0]
        rows = np.minimum((u * self.values.shape[0]).astype(np.int64), self.values.shape[0] - 1)
        return self.values[rows]


class ScenarioSet:
    """Seeded i.i.d. draws: an (n, d) array of finite reals plus provenance."""

    def __init__(self, values, seed: int | None = None, origin: str = ""):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ShapeError(f"scenario values must be 1-D or 2-D, got ndim {values.ndim}")
        if values.size and not np.all(np.isfinite(values)):
            raise DataError("scenario values must all be finite")
        self.values = values
        self.seed = None if seed is None else _rng.check_seed(seed)
        self.origin = origin

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def scalars(self) -> np.ndarray:
        """The single column of a univariate scenario set, shape (n,)."""
        if self.dim != 1:
            raise ShapeError(f"expected univariate scenarios, got dim {self.dim}")
        return self.values[:, 0]

    def __repr__(self):
        return f"ScenarioSet(n={self.n}, dim={self.dim}, seed={self.seed}, origin={self.origin!r})"


def sample(dist, n: int, seed: int, lane_offset: int = 0) -> ScenarioSet:
    """Draw n i.i.d. scenarios; row i depends only on (seed, i).

    ``lane_offset`` selects a disjoint substream block of the same seed; the
    default block is what every plain caller sees.
    """
    n = int(n)
    if n < 0:
        raise ParameterError(f"sample size must be nonnegative, got {n}")
    seed = _rng.check_seed(seed)
    if not hasattr(dist, "_sample_rows"):
        raise ParameterError(f"not a distribution: {dist!r}")
    if n == 0:
        values = np.empty((0, dist.dim))
    else:
        values = dist._sample_rows(seed, np.arange(n, dtype=np.uint64), lane_offset)
    return ScenarioSet(values, seed=seed, origin=repr(dist))


@dataclass(frozen=True)
class RectProbEstimate:
    """Monte Carlo estimate of a multivariate-normal rectangle probability."""

    probability: float
    stderr: float
    n_samples: int
    budget_exhausted: bool


def mvn_rect_prob(
    mean,
    cov,
    upper,
    rel_tol: float = 1e-3,
    seed: int = 0,
    max_samples: int = 2**23,
    batch: int = 2**16,
) -> RectProbEstimate:
    """Estimate Pr{eta <= upper} for eta ~ N(mean, cov) by plain Monte Carlo.

    Sampling stops once the CLT standard error drops to
    ``rel_tol * max(estimate, 0.01)`` or the sample budget runs out (the
    result is then flagged and a :class:`BudgetWarning` is emitted).  Draws
    are counter-addressed, so the estimate is independent of batch size.
    One-dimensional problems are answered exactly through the normal CDF
    (stderr 0).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    if mean.shape != upper.shape:
        raise ShapeError(f"mean shape {mean.shape} != upper shape {upper.shape}")
    if cov.shape != (mean.shape[0],) * 2:
        raise ShapeError(f"covariance shape {cov.shape} does not match dimension {mean.shape[0]}")
    L, _, _ = psd_factor(cov)
    r = L.shape[1]
    if r == 0:
        p = float(np.all(mean <= upper))
        return RectProbEstimate(p, 0.0, 0, False)
    if mean.shape[0] == 1:
        sd = math.sqrt(float(cov[0, 0]))
        return RectProbEstimate(float(ndtr((upper[0] - mean[0]) / sd)), 0.0, 0, False)

    hits = 0
    total = 0
    factor_t = L.T
    while True:
        take = min(batch, max_samples - total)
        idx = np.arange(total, total + take, dtype=np.uint64)
        z = ndtri(_rng.uniforms(seed, idx, LANE_GAUSS, r))
        pts = mean + z @ factor_t
        hits += int(np.all(pts <= upper, axis=1).sum())
        total += take
        p = hits / total
        p_safe = (hits + 0.5) / (total + 1.0)
        se = math.sqrt(p_safe * (1.0 - p_safe) / total)
        if se <= rel_tol * max(p, 0.01):
            return RectProbEstimate(p, se, total, False)
        if total >= max_samples:
            warnings.warn(
                f"mvn_rect_prob: budget {max_samples} exhausted at stderr {se:.2e}",
                BudgetWarning,
                stacklevel=2,
            )
            return RectProbEstimate(p, se, total, True)


def gmm_density(gmm: GaussianMixture, z) -> float:
    """Mixture density: the weight-averaged normal densities at z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (gmm.dim,):
        raise ShapeError(f"point of dimension {z.shape} does not match mixture dim {gmm.dim}")
    total = 0.0
    d = gmm.dim
    for j in range(gmm.n_components):
        w, v = gmm._spectra[j]
        if np.any(w <= _PSD_RTOL * max(w[-1], 0.0)):
            raise MatrixError(f"component {j} covariance is singular; density undefined")
        diff = v.T @ (z - gmm.means[j])
        quad = float(np.sum(diff * diff / w))
        logdet = float(np.sum(np.log(w)))
        total += gmm.weights[j] * math.exp(-0.5 * (quad + logdet + d * math.log(2.0 * math.pi)))
    return total


def _component_sigmas(gmm: GaussianMixture) -> np.ndarray:
    if gmm.dim != 1:
        raise ShapeError(f"univariate mixture required, got dim {gmm.dim}")
    return np.sqrt(gmm.covs[:, 0, 0])


def gmm_cdf_1d(gmm: GaussianMixture, x: float) -> float:
    """CDF of a univariate mixture: sum of weighted component normal CDFs."""
    sigmas = _component_sigmas(gmm)
    mus = gmm.means[:, 0]
    total = 0.0
    for w, mu, sig in zip(gmm.weights, mus, sigmas):
        if sig > 0.0:
            total += w * float(ndtr((x - mu) / sig))
        else:
            total += w * (1.0 if x >= mu else 0.0)
    return total


def gmm_quantile_1d(gmm: GaussianMixture, p: float, cdf_tol: float = 1e-10) -> float:
    """Quantile of a univariate mixture by bisection on its CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile requires p in (0,1), got {p}")
    sigmas = _component_sigmas(gmm)
    mus = gmm.means[:, 0]
    zp = float(ndtri(p))
    lo = float(np.min(mus + sigmas * zp)) - 1e-9
    hi = float(np.max(mus + sigmas * zp)) + 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        resid = gmm_cdf_1d(gmm, mid) - p
        if abs(resid) <= cdf_tol:
            return mid
        if resid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, abs(hi)):
            break
    return hi


def read_scenarios(path) -> ScenarioSet:
    """Parse a scenario file: one row per line, comma-separated coordinates.

    Lines starting with ``#`` and blank lines are skipped; anything else that
    fails to parse as finite decimals is a hard error naming the line.
    """
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = [t.strip() for t in line.split(",")]
            if any(not t for t in tokens):
                raise ScenarioParseError(f"empty field in {line!r}", lineno)
            try:
                row = [float(t) for t in tokens]
            except ValueError:
                raise ScenarioParseError(f"malformed scenario {line!r}", lineno) from None
            if not all(math.isfinite(v) for v in row):
                raise ScenarioParseError(f"non-finite scenario {line!r}", lineno)
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise ScenarioParseError(
                    f"expected {dim} fields, got {len(row)}", lineno
                )
            rows.append(row)
    values = np.array(rows, dtype=float) if rows else np.empty((0, 1))
    return ScenarioSet(values, origin=str(path))


def read_gmm_file(path) -> GaussianMixture:
    """Load a mixture from ``gmm.weights`` / ``gmm.means`` / ``gmm.covs`` keys."""
    entries = load_kv(path)
    missing = [k for k in ("gmm.weights", "gmm.means", "gmm.covs") if k not in entries]
    if missing:
        raise ScenarioParseError(f"{path}: missing keys {missing}")
    wtext, wline = entries["gmm.weights"]
    mtext, mline = entries["gmm.means"]
    ctext, cline = entries["gmm.covs"]
    weights = parse_vector(wtext, wline)
    means = parse_matrix(mtext, mline)
    blocks = parse_blocks(ctext, cline)
    if len(blocks) != weights.shape[0]:
        raise ScenarioParseError(
            f"{len(blocks)} covariance blocks for {weights.shape[0]} weights", cline
        )
    return GaussianMixture(weights, means, np.array(blocks))


def parse_distribution(text: str):
    """Parse the CLI distribution grammar.

    ``normal(mu,sigma)``, ``lognormal(mu,sigma)``, ``gmm(file)``,
    ``empirical(file)``.
    """
    text = text.strip()
    if "(" not in text or not text.endswith(")"):
        raise ParameterError(f"cannot parse distribution {text!r}")
    name, _, inner = text[:-1].partition("(")
    name = name.strip().lower()
    inner = inner.strip()
    if name in ("normal", "lognormal"):
        parts = [p.strip() for p in inner.split(",")]
        if len(parts) != 2:
            raise ParameterError(f"{name} takes two parameters, got {text!r}")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParameterError(f"cannot parse distribution {text!r}") from None
        return Normal(a, b) if name == "normal" else LogNormal(a, b)
    if name == "gmm":
        return read_gmm_file(inner)
    if name == "empirical":
        scenarios = read_scenarios(inner)
        return Empirical(scenarios.values, origin=str(inner))
    raise ParameterError(f"unknown distribution {name!r}")
