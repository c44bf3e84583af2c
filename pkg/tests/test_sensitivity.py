import math

import numpy as np
import pytest

from riskkit.distributions import Normal, ScenarioSet
from riskkit.errors import DomainError, ParameterError, ScheduleError, ShapeError
from riskkit.losses import CvarLoss, EntropicLoss, ExponentialShortfallLoss
from riskkit.oce import Bracket, oce_estimate
from riskkit.sensitivity import (
    LocationFamily,
    ParametricLoss,
    PortfolioFamily,
    ScaleFamily,
    cvar_derivative_estimate,
    default_stage1_size,
    oce_derivative_estimate,
    parse_family,
    sr_derivative_estimate,
)
from riskkit.shortfall import ShortfallSpec

STD = Normal(0.0, 1.0)
Z95 = 1.6448536269514722
CVAR_ANALYTIC = math.exp(-0.5 * Z95 * Z95) / math.sqrt(2 * math.pi) / 0.05  # 2.0627128...


class ZeroDerivFamily(ParametricLoss):
    """xi(theta) = Z, xi' identically 0: derivative must vanish exactly."""

    def paired(self, theta, n, seed, lane_offset=0):
        z = Normal(0.0, 1.0)._sample_rows(seed, np.arange(n, dtype=np.uint64), lane_offset)[:, 0]
        return ScenarioSet(np.column_stack([z, np.zeros_like(z)]), seed=seed)


def test_location_family_cvar_derivative_is_one():
    est = cvar_derivative_estimate(0.05, LocationFamily(STD), theta=0.7, n=20_000, seed=1)
    assert est.value == pytest.approx(1.0, abs=0.05)
    assert est.ci_lo <= 1.0 <= est.ci_hi


def test_location_family_generic_oce_derivative_is_one():
    est = oce_derivative_estimate(EntropicLoss(), LocationFamily(STD), 0.0, n=20_000, seed=2)
    assert est.value == pytest.approx(1.0, abs=0.03)


def test_scale_family_cvar_derivative_matches_analytic():
    est = cvar_derivative_estimate(0.05, ScaleFamily(STD), theta=1.0, n=20_000, seed=3)
    assert est.value == pytest.approx(CVAR_ANALYTIC, abs=0.2)
    # homogeneity: theta-free derivative
    est2 = cvar_derivative_estimate(0.05, ScaleFamily(STD), theta=2.0, n=20_000, seed=3)
    assert est2.value == pytest.approx(est.value, abs=0.2)


def test_scale_family_entropic_derivative_equals_theta():
    est = oce_derivative_estimate(EntropicLoss(), ScaleFamily(STD), theta=1.0, n=20_000, seed=4)
    assert est.value == pytest.approx(1.0, abs=0.1)


def test_zero_pathwise_derivative_gives_exact_zero():
    est = cvar_derivative_estimate(0.1, ZeroDerivFamily(), theta=0.3, n=500, seed=5)
    assert est.value == 0.0
    assert sr_derivative_estimate(
        ShortfallSpec(ExponentialShortfallLoss(), 1.0, Bracket(-4, 4)),
        ZeroDerivFamily().paired(0.3, 500, 5),
    ) == pytest.approx(0.0, abs=1e-15)


def test_schedule_error_when_stage1_smaller():
    with pytest.raises(ScheduleError):
        oce_derivative_estimate(EntropicLoss(), LocationFamily(STD), 0.0, n=100, m=50, seed=0)


def test_default_stage1_size():
    assert default_stage1_size(100) == 1000
    assert default_stage1_size(10**5) == int(math.ceil(10**7.5))


def test_scale_family_domain():
    with pytest.raises(DomainError):
        ScaleFamily(STD).paired(0.0, 10, 0)


def test_two_stage_independence_permutation():
    family = ScaleFamily(STD)
    est = oce_derivative_estimate(EntropicLoss(), family, 1.0, n=4000, seed=9)
    # recompute the stage-2 mean by hand, permuted: identical up to reassociation
    from riskkit.distributions import LANE_STRIDE

    stage1 = family.paired(1.0, est.m, 9, lane_offset=0)
    t = oce_estimate(EntropicLoss(), stage1.values[:, 0]).t_star
    stage2 = family.paired(1.0, est.n, 9, lane_offset=LANE_STRIDE)
    xi, dxi = stage2.values[:, 0], stage2.values[:, 1]
    terms = EntropicLoss().deriv(xi - t) * dxi
    assert est.value == pytest.approx(float(np.mean(terms)), abs=1e-14)
    rng = np.random.default_rng(0)
    perm = rng.permutation(est.n)
    assert float(np.mean(terms[perm])) == pytest.approx(est.value, abs=1e-12)


def test_sr_location_derivative_exactly_one():
    spec = ShortfallSpec(ExponentialShortfallLoss(), 1.0, Bracket(-5, 5))
    paired = LocationFamily(STD).paired(0.4, 5000, seed=6)
    assert sr_derivative_estimate(spec, paired) == pytest.approx(1.0, abs=1e-12)


def test_sr_scale_derivative_tilting_oracle():
    spec = ShortfallSpec(ExponentialShortfallLoss(), 1.0, Bracket(-5, 5))
    paired = ScaleFamily(STD).paired(1.0, 100_000, seed=7)
    assert sr_derivative_estimate(spec, paired) == pytest.approx(1.0, abs=0.03)


def test_sr_derivative_needs_paired_columns():
    spec = ShortfallSpec(ExponentialShortfallLoss(), 1.0, Bracket(-5, 5))
    with pytest.raises(ShapeError):
        sr_derivative_estimate(spec, ScenarioSet(np.zeros(10)))


def test_portfolio_family_pairs():
    returns = ScenarioSet(np.array([[0.1, 0.3], [0.2, -0.1], [0.0, 0.5]]))
    from riskkit.distributions import Empirical

    family = PortfolioFamily(Empirical(returns.values), weights=[0.5, 0.5])
    paired = family.paired(2.0, 2000, seed=8)
    port = paired.values[:, 1]
    assert np.allclose(paired.values[:, 0], 2.0 * port)  # xi = -theta*(w.R) = theta * deriv
    assert set(np.round(-port, 6)) <= {0.2, 0.05, 0.25}


def test_portfolio_weights_shape_checked():
    from riskkit.distributions import Empirical

    with pytest.raises(ShapeError):
        PortfolioFamily(Empirical(np.ones((3, 2))), weights=[1.0])


def test_parse_family(tmp_path):
    fam = parse_family("location:normal(0,1)")
    assert isinstance(fam, LocationFamily)
    fam = parse_family("scale:normal(0,2)")
    assert isinstance(fam, ScaleFamily)
    path = tmp_path / "r.txt"
    path.write_text("0.1,0.2\n0.3,0.4\n")
    fam = parse_family(f"portfolio:{path}")
    assert isinstance(fam, PortfolioFamily)
    with pytest.raises(ParameterError):
        parse_family("spline:normal(0,1)")


def finite_difference(make_estimate, theta, delta=1e-3):
    hi = make_estimate(theta + delta)
    lo = make_estimate(theta - delta)
    return (hi - lo) / (2 * delta)


def test_finite_difference_agreement_light():
    # common-random-number central differences vs the estimators (small n;
    # the full spec-scale check lives in the acceptance suite)
    n, seed = 30_000, 123

    def oce_risk(family, loss):
        def at(theta):
            paired = family.paired(theta, n, seed)
            return oce_estimate(loss, paired.values[:, 0]).value

        return at

    fam = ScaleFamily(STD)
    fd = finite_difference(oce_risk(fam, EntropicLoss()), 1.0)
    est = oce_derivative_estimate(EntropicLoss(), fam, 1.0, n=n, seed=seed)
    assert fd == pytest.approx(est.value, abs=max(3 * (est.ci_hi - est.value), 0.02))

    spec = ShortfallSpec(ExponentialShortfallLoss(), 1.0, Bracket(-6, 6))

    def sr_risk(theta):
        from riskkit.shortfall import sr_estimate_saa

        return sr_estimate_saa(spec, fam.paired(theta, n, seed).values[:, 0]).t_star

    fd = finite_difference(sr_risk, 1.0)
    est = sr_derivative_estimate(spec, fam.paired(1.0, n, seed))
    assert fd == pytest.approx(est, abs=0.02)
