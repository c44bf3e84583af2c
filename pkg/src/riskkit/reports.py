"""Estimate records and the flat ``key = value`` report format.

Reports are deterministic: fixed key order, reals rendered with 12
significant digits, vectors comma-joined.  Every emitted report parses back
with :func:`parse_report`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with asymptotic-normal confidence interval."""

    estimate: float
    t_star: float
    sigma2: float
    n: int
    level: float
    ci_lo: float
    ci_hi: float
    seed: int | None = None

    def pairs(self) -> list[tuple[str, object]]:
        """Canonical key order for report rendering."""
        return [
            ("estimate", self.estimate),
            ("t_star", self.t_star),
            ("sigma2", self.sigma2),
            ("n", self.n),
            ("ci_lo", self.ci_lo),
            ("ci_hi", self.ci_hi),
            ("level", self.level),
            ("seed", self.seed),
        ]


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in np.asarray(value).ravel())
    return str(value)


def render_report(pairs) -> str:
    return "".join(f"{key} = {format_value(value)}\n" for key, value in pairs)


def _coerce(raw: str):
    if raw == "none":
        return None
    if raw == "true":
        return True
    if raw == "false":
        return False
    if "," in raw:
        try:
            return [float(tok) for tok in raw.split(",")]
        except ValueError:
            return raw
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_report(text: str) -> dict[str, object]:
    """Parse report lines back into a dict (inverse of render_report)."""
    out: dict[str, object] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"not a report line: {line!r}")
        out[key.strip()] = _coerce(value.strip())
    return out
