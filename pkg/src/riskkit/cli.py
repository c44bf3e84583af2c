"""Command-line front end.

Subcommands: ``estimate``, ``shortfall``, ``sensitivity``, ``optimize``,
``ccp``, ``mvn``.  Reports are flat ``key = value`` lines with reals at 12
significant digits; identical invocations (including the seed) produce
byte-identical reports.  Exit codes: 0 success (statistical warnings land in
the ``warnings`` key), 2 parse/validation/data errors, 3 infeasibility.
The default seed is 0, overridable through ``RISKKIT_SEED``; an explicit
``--seed`` always wins.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings as _warnings

import numpy as np

from . import ccp as ccp_mod
from .distributions import (
    ScenarioSet,
    mvn_rect_prob,
    parse_distribution,
    read_scenarios,
    sample,
)
from .errors import (
    BracketWarning,
    BudgetWarning,
    ConvergenceWarning,
    DegeneracyWarning,
    InfeasibleError,
    ParameterError,
    RiskkitError,
)
from .losses import parse_loss
from .oce import Bracket, FeasibleRegion, estimate_report, linear_portfolio_cost, oce_optimize
from .reports import render_report
from .sensitivity import (
    cvar_derivative_estimate,
    oce_derivative_estimate,
    parse_family,
    sr_derivative_estimate,
)
from .shortfall import RmSchedule, ShortfallSpec, sr_estimate_rm, sr_estimate_saa, sr_optimize
from .losses import CvarLoss

_WARNING_NAMES = {
    BracketWarning: "bracket",
    ConvergenceWarning: "convergence",
    DegeneracyWarning: "degeneracy",
    BudgetWarning: "budget",
}


def _default_seed() -> int:
    return int(os.environ.get("RISKKIT_SEED", "0"))


def _parse_bracket(text: str | None) -> Bracket | None:
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ParameterError(f"bracket must be 'lo,hi', got {text!r}")
    try:
        return Bracket(float(parts[0]), float(parts[1]))
    except ValueError:
        raise ParameterError(f"bracket must be 'lo,hi', got {text!r}") from None


def _parse_box(text: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
    rows = [r.split(",") for r in text.split(";")]
    if any(len(r) != 2 for r in rows):
        raise ParameterError(f"box must be 'lo,hi;lo,hi;...', got {text!r}")
    try:
        box = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError:
        raise ParameterError(f"box must be numeric, got {text!r}") from None
    if box.shape[0] == 1 and dim > 1:
        box = np.tile(box, (dim, 1))
    if box.shape[0] != dim:
        raise ParameterError(f"box has {box.shape[0]} rows for dimension {dim}")
    return box[:, 0], box[:, 1]


def _load_scenarios(args) -> ScenarioSet:
    if (args.dist is None) == (args.input is None):
        raise ParameterError("exactly one of --dist / --input is required")
    if args.input is not None:
        return read_scenarios(args.input)
    if args.n is None or args.n <= 0:
        raise ParameterError("--n must be a positive integer when sampling --dist")
    return sample(parse_distribution(args.dist), args.n, args.seed)


def _warning_names(records) -> str:
    names: list[str] = []
    for record in records:
        name = _WARNING_NAMES.get(record.category, record.category.__name__)
        if name not in names:
            names.append(name)
    return ";".join(names) if names else "none"


def _cmd_estimate(args) -> tuple[list, int]:
    loss = parse_loss(args.risk)
    scenarios = _load_scenarios(args)
    rep = estimate_report(
        loss, scenarios, bracket=_parse_bracket(args.bracket), level=args.level, tol=args.tol
    )
    return rep.pairs(), 0


def _cmd_shortfall(args) -> tuple[list, int]:
    loss = parse_loss(args.loss)
    bracket = _parse_bracket(args.bracket)
    spec = ShortfallSpec(loss, args.lam, bracket)
    if args.rm:
        if args.dist is None:
            raise ParameterError("Robbins-Monro mode needs --dist")
        if args.n is None or args.n <= 0:
            raise ParameterError("--n must be a positive integer")
        sched = RmSchedule(c=args.c, gamma=args.gamma, n=args.n, t0=args.t0)
        t = sr_estimate_rm(spec, parse_distribution(args.dist), sched, args.seed)
        pairs = [("estimate", t), ("t_star", t), ("n", args.n), ("seed", args.seed)]
        return pairs, 0
    scenarios = _load_scenarios(args)
    t, sigma2 = sr_estimate_saa(spec, scenarios, tol=args.tol)
    from .oce import oce_confidence_interval

    ci_lo, ci_hi = oce_confidence_interval(t, sigma2, scenarios.n, args.level)
    pairs = [
        ("estimate", t),
        ("t_star", t),
        ("sigma2", sigma2),
        ("n", scenarios.n),
        ("ci_lo", ci_lo),
        ("ci_hi", ci_hi),
        ("level", args.level),
        ("seed", scenarios.seed),
    ]
    return pairs, 0


def _cmd_sensitivity(args) -> tuple[list, int]:
    family = parse_family(args.family)
    if args.shortfall_lambda is not None:
        spec = ShortfallSpec(parse_loss(args.risk), args.shortfall_lambda, _parse_bracket(args.bracket))
        paired = family.paired(args.theta, args.n, args.seed)
        value = sr_derivative_estimate(spec, paired)
        pairs = [("estimate", value), ("n", args.n), ("theta", args.theta), ("seed", args.seed)]
        return pairs, 0
    loss = parse_loss(args.risk)
    kwargs = dict(
        theta=args.theta,
        n=args.n,
        m=args.m,
        seed=args.seed,
        level=args.level,
        bracket=_parse_bracket(args.bracket),
    )
    if isinstance(loss, CvarLoss):
        est = cvar_derivative_estimate(loss.alpha, family, **kwargs)
    else:
        est = oce_derivative_estimate(loss, family, **kwargs)
    pairs = [
        ("estimate", est.value),
        ("stderr", est.stderr),
        ("ci_lo", est.ci_lo),
        ("ci_hi", est.ci_hi),
        ("t_inner", est.t_inner),
        ("m", est.m),
        ("n", est.n),
        ("theta", args.theta),
        ("level", est.level),
        ("seed", est.seed),
    ]
    return pairs, 0


def _cmd_optimize(args) -> tuple[list, int]:
    scenarios = _load_scenarios(args)
    dim = scenarios.dim
    lower, upper = _parse_box(args.box, dim)
    region = FeasibleRegion(lower, upper, simplex=args.simplex)
    cost = linear_portfolio_cost(dim)
    if args.lam is not None:
        spec = ShortfallSpec(parse_loss(args.loss), args.lam, _parse_bracket(args.bracket))
        res = sr_optimize(spec, cost, scenarios, region, tol=args.tol, max_iter=args.max_iter)
        pairs = [
            ("x_star", res.x),
            ("t_star", res.t_star),
            ("sigma2", res.sigma2),
            ("n", scenarios.n),
            ("seed", scenarios.seed),
        ]
        return pairs, 0
    loss = parse_loss(args.risk)
    res = oce_optimize(
        loss,
        cost,
        scenarios,
        region,
        bracket=_parse_bracket(args.bracket),
        tol=args.tol,
        max_iter=args.max_iter,
    )
    pairs = [
        ("x_star", res.x),
        ("t_star", res.t_star),
        ("estimate", res.value),
        ("n", scenarios.n),
        ("seed", scenarios.seed),
    ]
    return pairs, 0


def _cmd_ccp(args) -> tuple[list, int]:
    problem = ccp_mod.read_problem(args.problem)
    if args.solver == "local":
        res = ccp_mod.ccp_solve_local(problem, tol=args.tol)
        pairs = [
            ("x_star", res.x),
            ("value", res.value),
            ("prob_at_x", res.probability),
            ("residual", res.residual),
            ("iterations", res.iterations),
            ("status", res.status),
        ]
        return pairs, 0
    res = ccp_mod.ccp_solve_bnb(
        problem, eps_gap=args.eps_gap, node_budget=args.node_budget, tol=args.tol
    )
    pairs = [
        ("x_star", res.x),
        ("value", res.value),
        ("gap", res.gap),
        ("prob_at_x", res.probability),
        ("nodes", res.nodes),
        ("status", res.status),
    ]
    return pairs, 0


def _cmd_mvn(args) -> tuple[list, int]:
    from ._kvfile import parse_matrix, parse_vector

    mean = parse_vector(args.mean, 0)
    cov = parse_matrix(args.cov, 0)
    upper = parse_vector(args.upper, 0)
    res = mvn_rect_prob(mean, cov, upper, rel_tol=args.rel_tol, seed=args.seed)
    pairs = [
        ("prob", res.probability),
        ("stderr", res.stderr),
        ("n_samples", res.n_samples),
        ("budget_exhausted", res.budget_exhausted),
        ("seed", args.seed),
    ]
    return pairs, 0


def _add_sampling_args(p, with_n=True):
    p.add_argument("--dist", help="distribution spec, e.g. normal(0,1), gmm(file), empirical(file)")
    p.add_argument("--input", help="scenario file (one scenario per line)")
    if with_n:
        p.add_argument("--n", type=int, default=None, help="sample size when drawing from --dist")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed (default 0 or RISKKIT_SEED)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate an OCE risk measure from scenarios")
    p.add_argument("--risk", required=True, help="loss spec, e.g. cvar:0.05")
    _add_sampling_args(p)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bracket", default=None, help="'lo,hi' bracket for the inner minimizer")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("shortfall", help="estimate a utility-based shortfall risk")
    p.add_argument("--loss", required=True, help="loss spec, e.g. expsr")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="shortfall threshold")
    _add_sampling_args(p)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bracket", default=None)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--rm", action="store_true", help="Robbins-Monro streaming mode")
    p.add_argument("--c", type=float, default=1.0, help="RM step constant")
    p.add_argument("--gamma", type=float, default=1.0, help="RM step exponent in (1/2, 1]")
    p.add_argument("--t0", type=float, default=None, help="RM start (default: bracket midpoint)")
    p.set_defaults(handler=_cmd_shortfall)

    p = sub.add_parser("sensitivity", help="derivative of a risk measure in a scalar parameter")
    p.add_argument("--risk", required=True, help="loss spec (OCE) or SR loss with --shortfall-lambda")
    p.add_argument("--family", required=True, help="location:..., scale:..., portfolio:<file>")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--n", type=int, required=True, help="stage-2 size")
    p.add_argument("--m", type=int, default=None, help="stage-1 size (default ceil(n^1.5))")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bracket", default=None)
    p.add_argument("--shortfall-lambda", type=float, default=None, help="switch to SR-derivative mode")
    p.set_defaults(handler=_cmd_sensitivity)

    p = sub.add_parser("optimize", help="optimize an OCE or shortfall risk over a portfolio")
    p.add_argument("--risk", default=None, help="OCE loss spec (OCE mode)")
    p.add_argument("--loss", default=None, help="SR loss spec (with --lambda)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="SR threshold (SR mode)")
    _add_sampling_args(p)
    p.add_argument("--box", default="0,1", help="per-coordinate bounds 'lo,hi;lo,hi;...'")
    p.add_argument("--simplex", action="store_true", help="add the constraint sum(x) = 1")
    p.add_argument("--bracket", default=None)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=8000)
    p.set_defaults(handler=_cmd_optimize)

    p = sub.add_parser("ccp", help="solve a chance-constrained program from a problem file")
    p.add_argument("--problem", required=True, help="problem file (key = value format)")
    p.add_argument("--solver", choices=("bnb", "local"), default="bnb")
    p.add_argument("--eps-gap", type=float, default=1e-4)
    p.add_argument("--node-budget", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_ccp)

    p = sub.add_parser("mvn", help="multivariate normal rectangle probability")
    p.add_argument("--mean", required=True, help="comma-separated mean vector")
    p.add_argument("--cov", required=True, help="covariance rows 'a,b;c,d'")
    p.add_argument("--upper", required=True, help="comma-separated upper bounds")
    p.add_argument("--rel-tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_mvn)

    for sp in sub.choices.values():
        sp.add_argument("--out", default=None, help="also write the report to this file")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = _default_seed()
    try:
        with _warnings.catch_warnings(record=True) as records:
            _warnings.simplefilter("always")
            pairs, status = args.handler(args)
        pairs = list(pairs) + [("warnings", _warning_names(records))]
        text = render_report(pairs)
        sys.stdout.write(text)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as handle:
                handle.write(text)
        return status
    except InfeasibleError as exc:
        pairs = [("status", "infeasible")]
        if exc.best_probability is not None:
            pairs.append(("best_probability", exc.best_probability))
        pairs.append(("error", str(exc)))
        text = render_report(pairs)
        sys.stdout.write(text)
        if getattr(args, "out", None):
            with open(args.out, "w", encoding="utf-8") as handle:
                handle.write(text)
        return 3
    except (RiskkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
