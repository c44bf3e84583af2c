"""Line-based ``key = value`` file parsing shared by problem and GMM files.

Grammar: one ``key = value`` pair per line, ``#`` starts a comment line,
blank lines ignored.  Values are scalars, comma-separated vectors,
semicolon-separated matrix rows, or ``|``-separated matrix blocks.
"""

from __future__ import annotations

import numpy as np

from .errors import ScenarioParseError


def load_kv(path) -> dict[str, tuple[str, int]]:
    """Read a key-value file, mapping key -> (raw value, line number)."""
    entries: dict[str, tuple[str, int]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ScenarioParseError(f"expected 'key = value', got {line!r}", lineno)
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ScenarioParseError("empty key", lineno)
            if key in entries:
                raise ScenarioParseError(f"duplicate key {key!r}", lineno)
            entries[key] = (value.strip(), lineno)
    return entries


def _parse_float(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ScenarioParseError(f"not a number: {token!r}", line) from None
    if not np.isfinite(value):
        raise ScenarioParseError(f"non-finite value: {token!r}", line)
    return value


def parse_vector(text: str, line: int) -> np.ndarray:
    tokens = [t.strip() for t in text.split(",")]
    if any(not t for t in tokens):
        raise ScenarioParseError(f"empty entry in vector {text!r}", line)
    return np.array([_parse_float(t, line) for t in tokens])


def parse_matrix(text: str, line: int) -> np.ndarray:
    rows = [parse_vector(row, line) for row in text.split(";")]
    widths = {row.shape[0] for row in rows}
    if len(widths) != 1:
        raise ScenarioParseError(f"ragged matrix rows in {text!r}", line)
    return np.vstack(rows)


def parse_blocks(text: str, line: int) -> list[np.ndarray]:
    return [parse_matrix(block, line) for block in text.split("|")]
