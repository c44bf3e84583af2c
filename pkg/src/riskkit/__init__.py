"""Monte Carlo estimation, sensitivity analysis and optimization of convex
risk measures, plus chance-constrained programming under Gaussian mixtures."""

from .distributions import (
    Empirical,
    GaussianMixture,
    LogNormal,
    MultivariateNormal,
    Normal,
    ScenarioSet,
    gmm_cdf_1d,
    gmm_density,
    gmm_quantile_1d,
    mvn_rect_prob,
    parse_distribution,
    read_scenarios,
    sample,
    std_normal_cdf,
    std_normal_quantile,
)
from .losses import (
    CvarLoss,
    EntropicLoss,
    ExponentialShortfallLoss,
    LossFunction,
    PiecewiseLinearLoss,
    PowerLoss,
    SmoothedCvarLoss,
    parse_loss,
)
from .oce import (
    Bracket,
    CostModel,
    FeasibleRegion,
    estimate_report,
    linear_portfolio_cost,
    oce_confidence_interval,
    oce_estimate,
    oce_optimize,
    oce_solution_variance,
    oce_variance,
)
from .reports import EstimateReport, parse_report, render_report
from .sensitivity import (
    LocationFamily,
    ParametricLoss,
    PortfolioFamily,
    ScaleFamily,
    cvar_derivative_estimate,
    oce_derivative_estimate,
    parse_family,
    sr_derivative_estimate,
)
from .shortfall import (
    RmSchedule,
    ShortfallSpec,
    sr_estimate_rm,
    sr_estimate_saa,
    sr_optimize,
)
from .ccp import (
    CcpProblem,
    LinearChanceConstraint,
    Polyhedron,
    PolytopeChanceSystem,
    YRectangle,
    bnb_lower_bound,
    ccp_solve_bnb,
    ccp_solve_local,
    gmm_poly_grad,
    gmm_poly_prob,
    hm_gradient,
    joint_to_single,
    linear_cc_grad,
    linear_cc_value,
    read_problem,
)

__version__ = "0.1.0"
