import numpy as np
import pytest

from riskkit.reports import EstimateReport, format_value, parse_report, render_report


def test_format_reals_twelve_significant_digits():
    assert format_value(2.0627128425623).startswith("2.06271284256")
    assert format_value(1.0) == "1"
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1.5e-11)) == "1.5e-11"


def test_format_vectors_and_specials():
    assert format_value(np.array([0.5, 0.25])) == "0.5,0.25"
    assert format_value(None) == "none"
    assert format_value(True) == "true"
    assert format_value(7) == "7"


def test_render_parse_round_trip():
    pairs = [
        ("estimate", 2.062712842),
        ("n", 1000000),
        ("x_star", np.array([0.5, 0.5])),
        ("status", "optimal"),
        ("budget_exhausted", False),
        ("seed", None),
    ]
    text = render_report(pairs)
    parsed = parse_report(text)
    assert parsed["estimate"] == pytest.approx(2.062712842)
    assert parsed["n"] == 1000000
    assert parsed["x_star"] == [0.5, 0.5]
    assert parsed["status"] == "optimal"
    assert parsed["budget_exhausted"] is False
    assert parsed["seed"] is None


def test_render_is_deterministic():
    pairs = [("a", 1 / 3), ("b", 2**0.5)]
    assert render_report(pairs) == render_report(pairs)


def test_parse_report_rejects_garbage():
    with pytest.raises(ValueError):
        parse_report("not a report line")


def test_estimate_report_pairs_order():
    rep = EstimateReport(1.0, 0.5, 2.0, 100, 0.95, 0.7, 1.3, 42)
    keys = [k for k, _ in rep.pairs()]
    assert keys == ["estimate", "t_star", "sigma2", "n", "ci_lo", "ci_hi", "level", "seed"]
