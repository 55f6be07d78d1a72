"""
Deflection profiles and the geometry of the layered domain.

A profile u is sampled on a uniform grid of D = (-L, L). The domain above
the ground plate splits into the gap Omega_1(u) = {-H < z < u(x)} and the
plate Omega_2(u) = {u(x) < z < u(x) + d}, separated by the graph of u.
Where u touches -H (the coincidence set) the gap pinches off.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from errors import CollapseError, ProfileError
from utils import array_digest, trapezoid_weights

logger = logging.getLogger(__name__)

# Relative tolerance for the uniform-spacing check.
GRID_RTOL = 1e-9
MIN_STENCIL_SAMPLES = 4
MIN_CLASSIFY_SAMPLES = 5


class PhysicalParams(BaseModel):
    """Plate geometry, top potential and the two permittivities."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    L: PositiveFloat = 1.0
    H: PositiveFloat = 1.0
    d: PositiveFloat = 1.0
    V: PositiveFloat = 1.0
    sigma1: PositiveFloat = 1.0
    sigma2: PositiveFloat = 2.0

    @model_validator(mode="after")
    def _warn_invisible_interface(self) -> "PhysicalParams":
        if self.sigma1 == self.sigma2:
            logger.warning(
                f"sigma1 == sigma2 == {self.sigma1}: the interface carries no material jump"
            )
        return self

    @property
    def sigma_jump(self) -> float:
        """[[sigma]] = sigma1 - sigma2."""
        return self.sigma1 - self.sigma2


def default_eps_touch(params: PhysicalParams) -> float:
    return 1e-9 * params.H


def default_eps_bc(params: PhysicalParams) -> float:
    return 1e-12 * max(1.0, params.H)


def default_eps_sign(params: PhysicalParams, du: np.ndarray) -> float:
    return 1e-10 * max(1.0, abs(params.sigma_jump) * float(np.max(np.abs(du))))


def _first_derivative(u: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(u, dx, edge_order=2)


def _second_derivative(u: np.ndarray, dx: float) -> np.ndarray:
    d2u = np.empty_like(u)
    d2u[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx**2
    d2u[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / dx**2
    d2u[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / dx**2
    return d2u


def _check_uniform(x: np.ndarray, L: float) -> float:
    if x.ndim != 1 or x.size < 3:
        raise ProfileError(f"profile needs at least 3 samples, got {x.size}")
    spacing = np.diff(x)
    dx = 2.0 * L / (x.size - 1)
    if np.any(spacing <= 0):
        raise ProfileError("profile abscissae must be strictly increasing")
    if np.max(np.abs(spacing - dx)) > GRID_RTOL * dx:
        raise ProfileError("profile abscissae are not uniformly spaced")
    if abs(x[0] + L) > GRID_RTOL * L or abs(x[-1] - L) > GRID_RTOL * L:
        raise ProfileError(f"profile grid must span [-{L}, {L}], got [{x[0]}, {x[-1]}]")
    return dx


@dataclass(frozen=True, eq=False)
class Profile:
    """Sampled deflection with first and second derivative samples."""

    params: PhysicalParams
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    analytic_slopes: bool = False

    @classmethod
    def from_samples(
        cls,
        params: PhysicalParams,
        u: np.ndarray,
        du: Optional[np.ndarray] = None,
        d2u: Optional[np.ndarray] = None,
        x: Optional[np.ndarray] = None,
    ) -> "Profile":
        """
        Build a profile from deflection samples.

        Args:
            params: Physical parameters
            u: Nx+1 deflection samples
            du: First derivative samples (finite differences if omitted)
            d2u: Second derivative samples (finite differences if omitted)
            x: Abscissae; the uniform grid on [-L, L] if omitted

        Returns:
            Validated profile; samples in (-H - eps, -H) are clamped to -H

        Raises:
            ProfileError: On non-uniform grids, non-zero end values or samples
                below the ground plate
        """
        analytic = du is not None
        u = np.array(u, dtype=float)
        if x is None:
            x = np.linspace(-params.L, params.L, u.size)
        x = np.array(x, dtype=float)
        if x.shape != u.shape:
            raise ProfileError(f"x and u differ in length: {x.size} vs {u.size}")
        dx = _check_uniform(x, params.L)

        eps_bc = default_eps_bc(params)
        if abs(u[0]) > eps_bc or abs(u[-1]) > eps_bc:
            raise ProfileError(
                f"profile must vanish at x = ±L, got u(-L)={u[0]:.3e}, u(L)={u[-1]:.3e}"
            )
        u[0] = u[-1] = 0.0

        eps_geo = default_eps_touch(params)
        if np.any(u < -params.H - eps_geo):
            i = int(np.argmin(u))
            raise ProfileError(
                f"profile penetrates the ground plate at x={x[i]:.6g}: u={u[i]:.6g} < -H={-params.H}"
            )
        below = u < -params.H
        if np.any(below):
            logger.warning(f"Clamping {int(below.sum())} samples to -H")
            u[below] = -params.H

        if (du is None or d2u is None) and u.size < MIN_STENCIL_SAMPLES:
            raise ProfileError(
                f"finite-difference derivatives need at least {MIN_STENCIL_SAMPLES} samples, got {u.size}"
            )
        du = _first_derivative(u, dx) if du is None else np.array(du, dtype=float)
        d2u = _second_derivative(u, dx) if d2u is None else np.array(d2u, dtype=float)
        if du.shape != u.shape or d2u.shape != u.shape:
            raise ProfileError("derivative samples must match the deflection samples")
        return cls(params=params, x=x, u=u, du=du, d2u=d2u, analytic_slopes=analytic)

    @classmethod
    def from_function(
        cls,
        params: PhysicalParams,
        nx: int,
        func: Callable[[np.ndarray], np.ndarray],
        dfunc: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        d2func: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> "Profile":
        """Sample an analytic deflection (and optional derivatives) on nx columns."""
        x = np.linspace(-params.L, params.L, nx + 1)
        return cls.from_samples(
            params,
            func(x),
            du=None if dfunc is None else dfunc(x),
            d2u=None if d2func is None else d2func(x),
            x=x,
        )

    @property
    def nx(self) -> int:
        return self.x.size - 1

    @property
    def dx(self) -> float:
        return 2.0 * self.params.L / self.nx

    @property
    def digest(self) -> str:
        return array_digest(self.x, self.u, self.du, self.d2u)

    def value_at(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of u."""
        return np.interp(x, self.x, self.u)

    def slope_at(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of the derivative samples."""
        return np.interp(x, self.x, self.du)

    def perturbed(self, direction: "Profile", t: float) -> "Profile":
        """
        Return v + t*w on the same grid.

        Raises:
            ProfileError: If the grids differ or the result leaves the admissible range
        """
        if direction.x.shape != self.x.shape or not np.array_equal(direction.x, self.x):
            raise ProfileError("perturbation direction lives on a different grid")
        combined = Profile.from_samples(
            self.params,
            self.u + t * direction.u,
            du=self.du + t * direction.du,
            d2u=self.d2u + t * direction.d2u,
            x=self.x,
        )
        return replace(combined, analytic_slopes=self.analytic_slopes and direction.analytic_slopes)


class AdmissibilityClass(str, Enum):
    INTERIOR_S = "InteriorS"
    BAR_S_ONLY = "BarSOnly"
    INADMISSIBLE = "Inadmissible"


class Admissibility(BaseModel):
    """Classification of a profile against the admissible sets."""

    model_config = ConfigDict(frozen=True)

    classification: AdmissibilityClass = Field(serialization_alias="class")
    reasons: list[str] = []
    coincidence: list[tuple[int, int]] = []
    slope_left: float
    slope_right: float
    min_gap: float

    @property
    def admissible(self) -> bool:
        return self.classification != AdmissibilityClass.INADMISSIBLE


def _coincidence_runs(touching: np.ndarray) -> list[tuple[int, int]]:
    runs: list[tuple[int, int]] = []
    start = None
    for i, flag in enumerate(touching):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, touching.size - 1))
    return runs


def endpoint_slopes(profile: Profile) -> tuple[float, float]:
    """Slopes at -L and +L: the supplied derivative if analytic, else one-sided 3-point differences."""
    if profile.analytic_slopes:
        return float(profile.du[0]), float(profile.du[-1])
    u, dx = profile.u, profile.dx
    left = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
    right = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx)
    return float(left), float(right)


def classify(
    profile: Profile,
    eps_sign: Optional[float] = None,
    eps_touch: Optional[float] = None,
) -> Admissibility:
    """
    Classify a profile as strictly admissible, admissible with contact, or inadmissible.

    The sign condition is [[sigma]] u'(L) <= eps_sign at +L and
    -[[sigma]] u'(-L) <= eps_sign at -L; contact is u + H <= eps_touch on grid nodes.

    Raises:
        ProfileError: On non-uniform grids or fewer than 5 samples
    """
    params = profile.params
    if profile.u.size < MIN_CLASSIFY_SAMPLES:
        raise ProfileError(
            f"classification needs at least {MIN_CLASSIFY_SAMPLES} samples, got {profile.u.size}"
        )
    _check_uniform(profile.x, params.L)

    if eps_sign is None:
        eps_sign = default_eps_sign(params, profile.du)
    if eps_touch is None:
        eps_touch = default_eps_touch(params)

    jump = params.sigma_jump
    slope_left, slope_right = endpoint_slopes(profile)
    reasons = []
    if jump * slope_right > eps_sign:
        reasons.append(f"sign condition fails at +L: [[sigma]]*u'(L) = {jump * slope_right:.6g} > 0")
    if -jump * slope_left > eps_sign:
        reasons.append(f"sign condition fails at -L: -[[sigma]]*u'(-L) = {-jump * slope_left:.6g} > 0")

    gap = profile.u + params.H
    coincidence = _coincidence_runs(gap <= eps_touch)

    if reasons:
        classification = AdmissibilityClass.INADMISSIBLE
    elif coincidence:
        classification = AdmissibilityClass.BAR_S_ONLY
    else:
        classification = AdmissibilityClass.INTERIOR_S

    logger.info(f"Profile {profile.digest} classified as {classification.value}")
    return Admissibility(
        classification=classification,
        reasons=reasons,
        coincidence=coincidence,
        slope_left=slope_left,
        slope_right=slope_right,
        min_gap=float(gap.min()),
    )


class ProfileNorms(NamedTuple):
    l_inf: float
    h1: float
    h2: float


def profile_norms(profile: Profile) -> ProfileNorms:
    """Trapezoidal H1 and H2 norms of u, plus max |u|."""
    weights = trapezoid_weights(profile.x.size, profile.dx)
    l2_sq = float(weights @ profile.u**2)
    d1_sq = float(weights @ profile.du**2)
    d2_sq = float(weights @ profile.d2u**2)
    return ProfileNorms(
        l_inf=float(np.max(np.abs(profile.u))),
        h1=float(np.sqrt(l2_sq + d1_sq)),
        h2=float(np.sqrt(l2_sq + d1_sq + d2_sq)),
    )


class DomainSummary(NamedTuple):
    area_lower: float
    area_upper: float
    interface_length: float
    M: float


def build_domain_summary(profile: Profile) -> DomainSummary:
    """Layer areas, interface arclength and the box height M = d + max|u|."""
    params = profile.params
    weights = trapezoid_weights(profile.x.size, profile.dx)
    return DomainSummary(
        area_lower=float(weights @ (profile.u + params.H)),
        area_upper=2.0 * params.L * params.d,
        interface_length=float(weights @ np.sqrt(1.0 + profile.du**2)),
        M=params.d + float(np.max(np.abs(profile.u))),
    )


def _scalar_or_array(value: np.ndarray):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def map_T1(profile: Profile, x, z, eps_touch: Optional[float] = None):
    """
    Map the gap layer onto D x (0, 1): (x, z) -> (x, (z + H) / (u(x) + H)).

    Raises:
        CollapseError: Where u(x) + H <= eps_touch
    """
    if eps_touch is None:
        eps_touch = default_eps_touch(profile.params)
    x = np.asarray(x, dtype=float)
    gap = profile.value_at(x) + profile.params.H
    if np.any(gap <= eps_touch):
        raise CollapseError(f"lower-layer map is singular: u(x) + H <= {eps_touch:.3e}")
    eta = (np.asarray(z, dtype=float) + profile.params.H) / gap
    return _scalar_or_array(x), _scalar_or_array(eta)


def map_T1_inverse(profile: Profile, x, eta):
    x = np.asarray(x, dtype=float)
    gap = profile.value_at(x) + profile.params.H
    z = -profile.params.H + np.asarray(eta, dtype=float) * gap
    return _scalar_or_array(x), _scalar_or_array(z)


def map_T2(profile: Profile, x, z):
    """Map the plate onto D x (1, 1 + d): (x, z) -> (x, z - u(x) + 1)."""
    x = np.asarray(x, dtype=float)
    eta = np.asarray(z, dtype=float) - profile.value_at(x) + 1.0
    return _scalar_or_array(x), _scalar_or_array(eta)


def map_T2_inverse(profile: Profile, x, eta):
    x = np.asarray(x, dtype=float)
    z = np.asarray(eta, dtype=float) + profile.value_at(x) - 1.0
    return _scalar_or_array(x), _scalar_or_array(z)
