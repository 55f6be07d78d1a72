"""
Dirichlet lift h_u(x, z) = zeta(z - u(x) + 1) with the quadratic ramp
zeta(r) = V min{1, (r - 1)^2 / d^2} for r > 1 and zeta = 0 for r <= 1.

The lift vanishes on the gap layer, equals V on the top of the plate and
is constant along curves parallel to the graph of u.
"""

import logging
from dataclasses import dataclass

import numpy as np

from geometry import PhysicalParams, Profile
from utils import trapezoid_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiftSpec:
    """Top potential V and plate thickness d of the quadratic ramp."""

    V: float
    d: float

    @classmethod
    def from_params(cls, params: PhysicalParams) -> "LiftSpec":
        return cls(V=params.V, d=params.d)


def _as_output(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def eval_zeta(spec: LiftSpec, r):
    """
    Evaluate the ramp and its first two derivatives.

    Derivatives at the kinks r = 1 and r = 1 + d are the left-sided ones.

    Args:
        spec: Lift parameters
        r: Scalar or array of arguments

    Returns:
        Tuple (zeta, zeta', zeta'')
    """
    r = np.asarray(r, dtype=float)
    s = r - 1.0
    ramp = (s > 0.0) & (s <= spec.d)
    above = s > spec.d

    value = np.where(ramp, spec.V * s**2 / spec.d**2, np.where(above, spec.V, 0.0))
    first = np.where(ramp, 2.0 * spec.V * s / spec.d**2, 0.0)
    second = np.where(ramp, 2.0 * spec.V / spec.d**2, 0.0)
    return _as_output(value), _as_output(first), _as_output(second)


def eval_h(spec: LiftSpec, profile: Profile, x, z):
    """h(x, z) = zeta(z - u(x) + 1)."""
    value, _, _ = eval_zeta(spec, np.asarray(z, dtype=float) - profile.value_at(x) + 1.0)
    return value


def eval_h_gradient(spec: LiftSpec, profile: Profile, x, z):
    """Analytic gradient (-u'(x) zeta', zeta') of the lift."""
    _, first, _ = eval_zeta(spec, np.asarray(z, dtype=float) - profile.value_at(x) + 1.0)
    first = np.asarray(first)
    return _as_output(-profile.slope_at(x) * first), _as_output(first)


def lift_h1_norm(spec: LiftSpec, profile: Profile) -> float:
    """
    H1(Omega(u)) norm of the lift.

    Integrated exactly in z column by column:
    int h^2 dz = V^2 d / 5 and int |grad h|^2 dz = 4 V^2 (1 + u'^2) / (3 d);
    trapezoidal in x.
    """
    V, d = spec.V, spec.d
    column = V**2 * d / 5.0 + 4.0 * V**2 * (1.0 + profile.du**2) / (3.0 * d)
    weights = trapezoid_weights(profile.x.size, profile.dx)
    return float(np.sqrt(weights @ column))


def lift_h1_bound(spec: LiftSpec, params: PhysicalParams, kappa: float) -> float:
    """Upper bound of lift_h1_norm over profiles with ||u||_{H2} <= kappa."""
    V, d, L = spec.V, spec.d, params.L
    return float(np.sqrt(2.0 * L * (V**2 * d / 5.0 + 4.0 * V**2 / (3.0 * d)) + 4.0 * V**2 * kappa**2 / (3.0 * d)))


def lift_energy(spec: LiftSpec, profile: Profile, sigma2: float) -> float:
    """(1/2) int sigma |grad h|^2 = (2 sigma2 V^2 / (3 d)) int (1 + u'^2) dx."""
    weights = trapezoid_weights(profile.x.size, profile.dx)
    return float(2.0 * sigma2 * spec.V**2 / (3.0 * spec.d) * (weights @ (1.0 + profile.du**2)))
