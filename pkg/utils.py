"""
Utility functions for the transmission solver.
Helper functions for formatting, order fitting and name parsing.
"""

import hashlib
import logging
import math
import re
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_BUILTIN_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_builtin_name(name: str) -> tuple[str, tuple[float, ...]]:
    """
    Parse a builtin profile name with optional numeric arguments.

    Args:
        name: Name string (e.g., "flat", "cosine(-0.5)", "bump(0.4, 0.6)")

    Returns:
        Tuple of (base name, argument tuple)

    Raises:
        ValueError: If the string is not of the form ``name`` or ``name(a, b, ...)``
    """
    match = _BUILTIN_PATTERN.match(name.lower())
    if not match:
        logger.warning(f"Could not parse profile name: {name}")
        raise ValueError(f"malformed profile name: {name!r}")

    base, raw_args = match.group(1), match.group(2)
    if raw_args is None or not raw_args.strip():
        return base, ()

    try:
        args = tuple(float(part) for part in raw_args.split(','))
    except ValueError as e:
        raise ValueError(f"malformed arguments in profile name {name!r}: {e}") from e
    return base, args


def format_float(value: float) -> str:
    """
    Format a float with 17 significant digits.

    17 digits round-trip every IEEE double, so re-reading and re-emitting a
    value reproduces the same text.
    """
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def fit_order(spacings: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """
    Fit the observed convergence order by least squares on log(error) vs log(h).

    Args:
        spacings: Mesh spacings, one per level
        errors: Error values, one per level

    Returns:
        Fitted slope, or None if fewer than two positive finite errors exist
    """
    pairs = [
        (h, e) for h, e in zip(spacings, errors)
        if e is not None and h > 0 and np.isfinite(e) and e > 0
    ]
    if len(pairs) < 2:
        return None
    log_h = np.log([h for h, _ in pairs])
    log_e = np.log([e for _, e in pairs])
    slope, _ = np.polyfit(log_h, log_e, 1)
    return float(slope)


def pairwise_ratios(values: Sequence[float]) -> list[Optional[float]]:
    """Ratios values[k+1]/values[k]; None where the denominator vanishes."""
    ratios: list[Optional[float]] = []
    for previous, current in zip(values[:-1], values[1:]):
        ratios.append(None if previous == 0 else float(current / previous))
    return ratios


def array_digest(*arrays: np.ndarray) -> str:
    """Short SHA-256 digest of the raw bytes of the given arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(np.ascontiguousarray(array, dtype=float).tobytes())
    return digest.hexdigest()[:16]


def trapezoid_weights(n_points: int, spacing: float) -> np.ndarray:
    """Composite trapezoidal weights for a uniform grid of n_points."""
    weights = np.full(n_points, spacing)
    weights[0] = weights[-1] = 0.5 * spacing
    return weights


__all__ = [
    'parse_builtin_name',
    'format_float',
    'fit_order',
    'pairwise_ratios',
    'array_digest',
    'trapezoid_weights',
]
