"""
Builtin deflection profiles and the profile CSV loader.
"""

import logging
from pathlib import Path
from typing import Callable

import numpy as np

from artifacts import artifact_handler
from errors import ProfileError
from geometry import PhysicalParams, Profile
from utils import parse_builtin_name

logger = logging.getLogger(__name__)


def flat(params: PhysicalParams, nx: int) -> Profile:
    """u = 0."""
    zero = np.zeros(nx + 1)
    return Profile.from_samples(params, zero, du=zero, d2u=zero)


def parabola_touch(params: PhysicalParams, nx: int) -> Profile:
    """u = H (x^2/L^2 - 1), touching the ground plate at x = 0."""
    H, L = params.H, params.L
    if nx % 2:
        logger.warning(f"parabola_touch on odd nx={nx}: no grid node at x=0, contact is invisible")
    return Profile.from_function(
        params,
        nx,
        lambda x: H * (x**2 / L**2 - 1.0),
        lambda x: 2.0 * H * x / L**2,
        lambda x: np.full_like(x, 2.0 * H / L**2),
    )


def cosine(params: PhysicalParams, nx: int, a: float) -> Profile:
    """u = a cos(pi x / (2L))."""
    k = np.pi / (2.0 * params.L)
    return Profile.from_function(
        params,
        nx,
        lambda x: a * np.cos(k * x),
        lambda x: -a * k * np.sin(k * x),
        lambda x: -a * k**2 * np.cos(k * x),
    )


def bump(params: PhysicalParams, nx: int, a: float, w: float) -> Profile:
    """u = -a cos^2(pi x / (2w)) on |x| <= w, 0 elsewhere; smooth up to the walls when w = L."""
    if not 0.0 < w <= params.L:
        raise ProfileError(f"bump half-width must lie in (0, L], got {w}")
    k = np.pi / w

    def inside(x):
        return np.abs(x) <= w

    return Profile.from_function(
        params,
        nx,
        lambda x: np.where(inside(x), -a * np.cos(0.5 * k * x) ** 2, 0.0),
        lambda x: np.where(inside(x), 0.5 * a * k * np.sin(k * x), 0.0),
        lambda x: np.where(inside(x), 0.5 * a * k**2 * np.cos(k * x), 0.0),
    )


BUILTIN_PROFILES: dict[str, tuple[int, Callable[..., Profile]]] = {
    "flat": (0, flat),
    "parabola_touch": (0, parabola_touch),
    "cosine": (1, cosine),
    "bump": (2, bump),
}


def builtin_profile(name: str, params: PhysicalParams, nx: int) -> Profile:
    """
    Build a builtin profile by name.

    Args:
        name: One of "flat", "parabola_touch", "cosine(a)", "bump(a,w)"
        params: Physical parameters
        nx: Number of grid columns

    Returns:
        Sampled profile with analytic derivatives

    Raises:
        ProfileError: On unknown names or wrong argument counts
    """
    try:
        base, args = parse_builtin_name(name)
    except ValueError as e:
        raise ProfileError(str(e)) from e

    if base not in BUILTIN_PROFILES:
        raise ProfileError(f"unknown builtin profile {base!r}; known: {sorted(BUILTIN_PROFILES)}")
    arity, factory = BUILTIN_PROFILES[base]
    if len(args) != arity:
        raise ProfileError(f"profile {base!r} takes {arity} argument(s), got {len(args)}")
    return factory(params, nx, *args)


def load_profile_csv(path: str | Path, params: PhysicalParams) -> Profile:
    """
    Load a profile from a CSV file with header ``x,u``.

    Raises:
        ProfileError: If the header or values are malformed
    """
    header, rows = artifact_handler.read_csv(path)
    if header != ["x", "u"]:
        raise ProfileError(f"{path}: expected header 'x,u', got {','.join(header)!r}")
    try:
        x = np.array([float(row[0]) for row in rows])
        u = np.array([float(row[1]) for row in rows])
    except (ValueError, IndexError) as e:
        raise ProfileError(f"{path}: malformed row: {e}") from e
    logger.info(f"Loaded profile with {x.size} samples from {path}")
    return Profile.from_samples(params, u, x=x)
