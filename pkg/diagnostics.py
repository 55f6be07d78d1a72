"""
Diagnostics for solved fields and the study drivers built on them.

Second derivatives are taken on the reference rectangles R1 = D x (0, 1) and
R2 = D x (1, 1 + d), where the terrain-following mesh is a uniform grid, and
mapped back to physical derivatives through the chain rule of the layer maps.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from boundary import LiftSpec, eval_h, lift_energy
from config import SolverSettings
from errors import DiagnosticsError, InadmissibleProfileError, ProfileError
from geometry import AdmissibilityClass, PhysicalParams, Profile, build_domain_summary, classify, profile_norms
from mesh import SHAPE_AT_GAUSS, Layer, LayeredMesh, transform_field_to_rectangles
from profiles import builtin_profile
from solver import Field, SolveResult, gauss_gradients, l2_norm, run_solve
from utils import fit_order, pairwise_ratios, trapezoid_weights

logger = logging.getLogger(__name__)

TraceLocation = Literal["interface_upper", "top"]


# ---------------------------------------------------------------------------
# Pointwise diagnostics
# ---------------------------------------------------------------------------

def _interface_edges(mesh: LayeredMesh) -> np.ndarray:
    """Columns i whose interface edge (x_i, x_i+1) touches no collapsed column."""
    columns = np.arange(mesh.nx)
    keep = ~(mesh.collapsed[:-1] | mesh.collapsed[1:])
    return columns[keep]


def flux_jump_residual(psi: Field, mesh: Optional[LayeredMesh] = None, sigma=None) -> tuple[float, float]:
    """
    Jump of the conormal flux sigma grad(psi) . n across the interface.

    One-sided fluxes come from the lower and upper elements at each interface
    edge midpoint. The jump J_E on edge E of length h_E enters as the edge term
    of a residual estimator, so the norms carry one extra factor sqrt(h_E):

        l2 = (sum_E h_E |J_E|^2 |E|)^(1/2),    linf = max_E h_E^(1/2) |J_E|

    Unweighted jumps do not decay where the plate meets the side walls at an
    angle, because psi is not H2 at those corners.

    Args:
        psi: Solved field
        mesh: Defaults to the field's mesh
        sigma: (sigma1, sigma2); the physical parameters if omitted

    Returns:
        Tuple of (l2, linf) of the edge-weighted jump; (0, 0) if every edge is collapsed
    """
    mesh = psi.mesh if mesh is None else mesh
    params = mesh.profile.params
    sigma1, sigma2 = (params.sigma1, params.sigma2) if sigma is None else sigma

    columns = _interface_edges(mesh)
    if columns.size == 0:
        return 0.0, 0.0

    lower = columns * mesh.ny + (mesh.n1 - 1)
    upper = columns * mesh.ny + mesh.n1
    values = psi.values[mesh.connectivity]
    grad_lower = np.einsum("kac,ka->kc", mesh.gradients_at(lower, 0.5, 1.0), values[lower])
    grad_upper = np.einsum("kac,ka->kc", mesh.gradients_at(upper, 0.5, 0.0), values[upper])

    dx = np.diff(mesh.x)[columns]
    slope = (mesh.z[columns + 1, mesh.n1] - mesh.z[columns, mesh.n1]) / dx
    stretch = np.sqrt(1.0 + slope**2)
    normal = np.stack([-slope, np.ones_like(slope)], axis=1) / stretch[:, None]

    jump = sigma1 * np.sum(grad_lower * normal, axis=1) - sigma2 * np.sum(grad_upper * normal, axis=1)
    length = dx * stretch
    l2 = float(np.sqrt(np.sum(length * jump**2 * length)))
    return l2, float(np.max(np.sqrt(length) * np.abs(jump)))


def poincare_check(chi: Field, profile: Optional[Profile] = None) -> tuple[float, float]:
    """
    Return (||chi||_L2, 2 ||H + d + u||_inf ||d_z chi||_L2) by Gauss quadrature.

    The first never exceeds the second when chi vanishes on the bottom plate.
    """
    mesh = chi.mesh
    profile = mesh.profile if profile is None else profile
    params = profile.params
    dz = gauss_gradients(chi)[..., 1]
    dz_norm = float(np.sqrt(np.sum(mesh.quadrature.weights * dz**2)))
    height = float(np.max(np.abs(params.H + params.d + profile.u)))
    return l2_norm(chi), 2.0 * height * dz_norm


# ---------------------------------------------------------------------------
# Second derivatives through the layer maps
# ---------------------------------------------------------------------------

class RectangleDerivatives(NamedTuple):
    dx: np.ndarray
    deta: np.ndarray
    dxx: np.ndarray
    dxeta: np.ndarray
    detaeta: np.ndarray


class PhysicalDerivatives(NamedTuple):
    dx: np.ndarray
    dz: np.ndarray
    dxx: np.ndarray
    dxz: np.ndarray
    dzz: np.ndarray


def _second_difference(values: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """
    Centered second difference with second-order one-sided stencils on the two
    boundary lines; with only three lines the boundary copies its neighbour.
    """
    moved = np.moveaxis(values, axis, 0)
    inner = (moved[2:] - 2.0 * moved[1:-1] + moved[:-2]) / spacing**2
    if moved.shape[0] < 4:
        first, last = inner[:1], inner[-1:]
    else:
        first = (2.0 * moved[:1] - 5.0 * moved[1:2] + 4.0 * moved[2:3] - moved[3:4]) / spacing**2
        last = (2.0 * moved[-1:] - 5.0 * moved[-2:-1] + 4.0 * moved[-3:-2] - moved[-4:-3]) / spacing**2
    return np.moveaxis(np.concatenate([first, inner, last], axis=0), 0, axis)


def _rectangle_derivatives(phi: np.ndarray, dx: float, deta: float) -> RectangleDerivatives:
    d_x = np.gradient(phi, dx, axis=0, edge_order=2)
    return RectangleDerivatives(
        dx=d_x,
        deta=np.gradient(phi, deta, axis=1, edge_order=2),
        dxx=_second_difference(phi, dx, axis=0),
        dxeta=np.gradient(d_x, deta, axis=1, edge_order=2),
        detaeta=_second_difference(phi, deta, axis=1),
    )


def _physical_upper(r: RectangleDerivatives, du: np.ndarray, d2u: np.ndarray) -> PhysicalDerivatives:
    du, d2u = du[:, None], d2u[:, None]
    return PhysicalDerivatives(
        dx=r.dx - du * r.deta,
        dz=r.deta,
        dxx=r.dxx - 2.0 * du * r.dxeta + du**2 * r.detaeta - d2u * r.deta,
        dxz=r.dxeta - du * r.detaeta,
        dzz=r.detaeta,
    )


def _physical_lower(
    r: RectangleDerivatives, eta: np.ndarray, gap: np.ndarray, du: np.ndarray, d2u: np.ndarray
) -> PhysicalDerivatives:
    # eta = (z + H) / (u + H): d_z eta = g, d_x eta = eta * q
    g = (1.0 / gap)[:, None]
    q = (-du / gap)[:, None]
    curv = (d2u / gap)[:, None]
    eta = eta[None, :]
    return PhysicalDerivatives(
        dx=r.dx + eta * q * r.deta,
        dz=g * r.deta,
        dxx=r.dxx + 2.0 * eta * q * r.dxeta + eta**2 * q**2 * r.detaeta + eta * (2.0 * q**2 - curv) * r.deta,
        dxz=g * (q * r.deta + r.dxeta + eta * q * r.detaeta),
        dzz=g**2 * r.detaeta,
    )


@dataclass(frozen=True, eq=False)
class LayerDerivatives:
    """Physical derivatives of one layer on its (x, eta) grid with quadrature weights."""

    derivatives: PhysicalDerivatives
    rectangle: RectangleDerivatives
    weights: np.ndarray          # physical area weights, zero on excluded columns
    rect_weights: np.ndarray     # (x, eta) weights without the Jacobian
    excluded: np.ndarray         # excluded columns
    sigma: float


def _layer_derivatives(field: Field, mesh: LayeredMesh, layer: int) -> LayerDerivatives:
    if min(mesh.nx, mesh.n1, mesh.n2) < 2:
        raise DiagnosticsError("second differences need at least two cells per direction and layer")
    profile = mesh.profile
    params = profile.params
    grids = transform_field_to_rectangles(field, mesh)
    dx = profile.dx
    wx = trapezoid_weights(mesh.nx + 1, dx)

    if layer == Layer.LOWER:
        collapsed = mesh.collapsed
        excluded = collapsed.copy()
        excluded[:-1] |= collapsed[1:]
        excluded[1:] |= collapsed[:-1]
        deta = 1.0 / mesh.n1
        gap = np.where(collapsed, 1.0, mesh.z[:, mesh.n1] + params.H)
        rect = _rectangle_derivatives(grids.phi1.filled(0.0), dx, deta)
        phys = _physical_lower(rect, grids.eta1, gap, profile.du, profile.d2u)
        rect_weights = np.outer(wx, trapezoid_weights(mesh.n1 + 1, deta))
        weights = rect_weights * gap[:, None]
        sigma = params.sigma1
    elif layer == Layer.UPPER:
        excluded = np.zeros(mesh.nx + 1, dtype=bool)
        deta = params.d / mesh.n2
        rect = _rectangle_derivatives(grids.phi2, dx, deta)
        phys = _physical_upper(rect, profile.du, profile.d2u)
        rect_weights = np.outer(wx, trapezoid_weights(mesh.n2 + 1, deta))
        weights = rect_weights.copy()
        sigma = params.sigma2
    else:
        raise DiagnosticsError(f"layer must be 1 or 2, got {layer}")

    weights[excluded] = 0.0
    rect_weights = np.where(excluded[:, None], 0.0, rect_weights)
    return LayerDerivatives(
        derivatives=phys,
        rectangle=rect,
        weights=weights,
        rect_weights=rect_weights,
        excluded=excluded,
        sigma=sigma,
    )


def h2_surrogate(field: Field, mesh: Optional[LayeredMesh] = None, layer: int = Layer.UPPER) -> tuple[float, float]:
    """
    Second-difference estimate of the H2 seminorm of a field on one layer.

    Args:
        field: Nodal field (usually psi)
        mesh: Defaults to the field's mesh
        layer: 1 (gap) or 2 (plate)

    Returns:
        Tuple of (seminorm estimate, fraction of D excluded next to collapsed columns)

    Raises:
        DiagnosticsError: If every column of the gap layer is excluded
    """
    mesh = field.mesh if mesh is None else mesh
    data = _layer_derivatives(field, mesh, layer)
    wx = trapezoid_weights(mesh.nx + 1, mesh.profile.dx)
    fraction = float(wx[data.excluded].sum() / wx.sum())
    if np.all(data.excluded):
        raise DiagnosticsError(f"layer {layer} has no column left after excluding collapsed columns")

    d = data.derivatives
    density = d.dxx**2 + 2.0 * d.dxz**2 + d.dzz**2
    return float(np.sqrt(np.sum(data.weights * density))), fraction


class IdentityReport(BaseModel):
    """Terms of the second-derivative identity in physical variables."""

    model_config = ConfigDict(frozen=True)

    lhs: float
    rhs_mixed: float
    rhs_top: float
    rhs_interface: float
    residual: float
    scale: float
    relative_residual: float


class TransformedIdentityReport(BaseModel):
    """Terms of the identity on the reference rectangles."""

    model_config = ConfigDict(frozen=True)

    lhs: float
    rhs_mixed: float
    rhs_drift: float
    rhs_interface: float
    residual: float
    scale: float
    relative_residual: float


def _relative(residual: float, scale: float) -> float:
    return abs(residual) / scale if scale > 0.0 else 0.0


def _refuse_collapse(mesh: LayeredMesh) -> None:
    if np.any(mesh.collapsed):
        raise DiagnosticsError(
            f"identity needs a profile off the ground plate; {int(mesh.collapsed.sum())} columns are collapsed"
        )


def identity_check(chi: Field, mesh: Optional[LayeredMesh] = None, profile: Optional[Profile] = None) -> IdentityReport:
    """
    Evaluate both sides of

        sum_i int sigma chi_xx chi_zz = sum_i int sigma chi_xz^2
            - (sigma2/2) int u'' (d_z chi_2(x, u + d))^2 dx
            - (1/2) int u'' / (1 + u'^2) [[sigma |grad chi|^2]](x, u) dx

    with [[f]] = f_lower - f_upper.

    Raises:
        DiagnosticsError: If the mesh has collapsed columns
    """
    mesh = chi.mesh if mesh is None else mesh
    profile = mesh.profile if profile is None else profile
    _refuse_collapse(mesh)

    lower = _layer_derivatives(chi, mesh, Layer.LOWER)
    upper = _layer_derivatives(chi, mesh, Layer.UPPER)
    wx = trapezoid_weights(mesh.nx + 1, profile.dx)
    du, d2u = profile.du, profile.d2u

    lhs = sum(
        data.sigma * float(np.sum(data.weights * data.derivatives.dxx * data.derivatives.dzz))
        for data in (lower, upper)
    )
    mixed = sum(data.sigma * float(np.sum(data.weights * data.derivatives.dxz**2)) for data in (lower, upper))

    top_dz = upper.derivatives.dz[:, -1]
    top = -0.5 * upper.sigma * float(np.sum(wx * d2u * top_dz**2))

    lo, up = lower.derivatives, upper.derivatives
    energy_lower = lower.sigma * (lo.dx[:, -1] ** 2 + lo.dz[:, -1] ** 2)
    energy_upper = upper.sigma * (up.dx[:, 0] ** 2 + up.dz[:, 0] ** 2)
    interface = -0.5 * float(np.sum(wx * d2u / (1.0 + du**2) * (energy_lower - energy_upper)))

    residual = lhs - (mixed + top + interface)
    scale = abs(lhs) + abs(mixed) + abs(top) + abs(interface)
    report = IdentityReport(
        lhs=lhs,
        rhs_mixed=mixed,
        rhs_top=top,
        rhs_interface=interface,
        residual=residual,
        scale=scale,
        relative_residual=_relative(residual, scale),
    )
    logger.info(f"Identity check: residual {residual:.3e}, scale {scale:.3e}")
    return report


def transformed_identity_check(
    chi: Field, mesh: Optional[LayeredMesh] = None, profile: Optional[Profile] = None
) -> TransformedIdentityReport:
    """
    The same identity stated for Phi on R1 and R2 with sigma_hat = sigma1/(u + H) on R1
    and sigma2 on R2.

    Raises:
        DiagnosticsError: If the mesh has collapsed columns
    """
    mesh = chi.mesh if mesh is None else mesh
    profile = mesh.profile if profile is None else profile
    _refuse_collapse(mesh)
    params = profile.params

    lower = _layer_derivatives(chi, mesh, Layer.LOWER)
    upper = _layer_derivatives(chi, mesh, Layer.UPPER)
    gap = mesh.z[:, mesh.n1] + params.H
    sigma_hat_lower = (params.sigma1 / gap)[:, None]
    sigma_hat_upper = params.sigma2
    r1, r2 = lower.rectangle, upper.rectangle
    w1, w2 = lower.rect_weights, upper.rect_weights

    lhs = float(np.sum(w1 * sigma_hat_lower * r1.dxx * r1.detaeta) + np.sum(w2 * sigma_hat_upper * r2.dxx * r2.detaeta))
    mixed = float(np.sum(w1 * sigma_hat_lower * r1.dxeta**2) + np.sum(w2 * sigma_hat_upper * r2.dxeta**2))
    drift = -params.sigma1 * float(np.sum(w1 * (profile.du / gap**2)[:, None] * r1.deta * r1.dxeta))

    wx = trapezoid_weights(mesh.nx + 1, profile.dx)
    du, d2u = profile.du, profile.d2u
    jump = params.sigma1 * r1.dx[:, -1] ** 2 - params.sigma2 * r2.dx[:, 0] ** 2
    interface = 0.5 * float(np.sum(wx * d2u * (du**2 - 1.0) / (1.0 + du**2) ** 2 * jump))

    residual = lhs - (mixed + drift + interface)
    scale = abs(lhs) + abs(mixed) + abs(drift) + abs(interface)
    return TransformedIdentityReport(
        lhs=lhs,
        rhs_mixed=mixed,
        rhs_drift=drift,
        rhs_interface=interface,
        residual=residual,
        scale=scale,
        relative_residual=_relative(residual, scale),
    )


@dataclass(frozen=True, eq=False)
class TraceData:
    """Gradient of the plate solution along the interface or the top."""

    where: str
    x: np.ndarray
    gradient: np.ndarray      # (nx, 2)
    norm_l2: float
    norm_l4: float


def _lp_norm(vectors: np.ndarray, dx: np.ndarray, p: int) -> float:
    magnitude = np.sqrt(np.sum(vectors**2, axis=-1))
    return float(np.sum(dx * magnitude**p) ** (1.0 / p))


def trace_gradient(psi: Field, mesh: Optional[LayeredMesh] = None, where: TraceLocation = "top") -> TraceData:
    """
    Gradient of the plate-side bilinear interpolant at edge midpoints along z = u+ or z = u + d.

    L2 and L4 norms of |grad| use the composite midpoint rule.
    """
    mesh = psi.mesh if mesh is None else mesh
    columns = np.arange(mesh.nx)
    if where == "top":
        elements, eta = columns * mesh.ny + (mesh.ny - 1), 1.0
    elif where == "interface_upper":
        elements, eta = columns * mesh.ny + mesh.n1, 0.0
    else:
        raise DiagnosticsError(f"unknown trace location {where!r}")

    local = psi.values[mesh.connectivity[elements]]
    gradient = np.einsum("kac,ka->kc", mesh.gradients_at(elements, 0.5, eta), local)
    dx = np.diff(mesh.x)
    return TraceData(
        where=where,
        x=0.5 * (mesh.x[:-1] + mesh.x[1:]),
        gradient=gradient,
        norm_l2=_lp_norm(gradient, dx, 2),
        norm_l4=_lp_norm(gradient, dx, 4),
    )


def trace_gap(first: TraceData, second: TraceData, p: int) -> float:
    """L_p distance between two traces sampled on the same midpoints."""
    if first.x.shape != second.x.shape:
        raise DiagnosticsError("trace gap needs traces on the same grid")
    dx = np.full(first.x.size, first.x[1] - first.x[0])
    return _lp_norm(first.gradient - second.gradient, dx, p)


# ---------------------------------------------------------------------------
# Closed-form flat solution
# ---------------------------------------------------------------------------

class FlatSolution(NamedTuple):
    """psi(z) = a (z + H) on [-H, 0] and a H + b z on [0, d] for u = 0 with insulated sides."""

    slope_lower: float
    slope_upper: float
    interface_value: float
    energy: float
    params: PhysicalParams

    def psi(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(
            z <= 0.0,
            self.slope_lower * (z + self.params.H),
            self.interface_value + self.slope_upper * z,
        )

    def gradient_z(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z < 0.0, self.slope_lower, self.slope_upper)


def two_layer_flat_solution(params: PhysicalParams) -> FlatSolution:
    """Closed-form solution for the flat profile: continuous value and flux sigma1 a = sigma2 b."""
    delta = params.sigma2 * params.H + params.sigma1 * params.d
    a = params.sigma2 * params.V / delta
    b = params.sigma1 * params.V / delta
    return FlatSolution(
        slope_lower=a,
        slope_upper=b,
        interface_value=a * params.H,
        energy=params.L * params.V**2 * params.sigma1 * params.sigma2 / delta,
        params=params,
    )


def flat_errors(result: SolveResult, exact: FlatSolution) -> tuple[float, float]:
    """
    Nodal max error of psi and L2 error of chi_h + h against the closed form.

    The L2 error uses the analytic lift at Gauss points.
    """
    mesh = result.mesh
    nodal = float(np.max(np.abs(result.psi.values - exact.psi(mesh.node_z))))
    lift = LiftSpec.from_params(mesh.profile.params)
    quad = mesh.quadrature
    chi_at_gauss = np.einsum("ga,ea->eg", SHAPE_AT_GAUSS, result.chi.values[mesh.connectivity])
    h_at_gauss = np.asarray(eval_h(lift, mesh.profile, quad.points[..., 0], quad.points[..., 1]))
    error = chi_at_gauss + h_at_gauss - exact.psi(quad.points[..., 1])
    return nodal, float(np.sqrt(np.sum(quad.weights * error**2)))


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

class StudyRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    t: float
    e_h1: float
    energy: float
    energy_gap: float
    trace_gap_p2: float
    trace_gap_p4: float
    interface_gap_p2: float
    interface_gap_p4: float
    lift_gap_h1: float
    lift_energy: float


STUDY_COLUMNS = list(StudyRecord.model_fields)


class StudyTable:
    """Perturbation study rows, sorted by n."""

    def __init__(self, records: Iterable[StudyRecord], base_energy: float):
        self.records = sorted(records, key=lambda record: record.n)
        self.base_energy = base_energy

    def column(self, name: str) -> list[float]:
        return [getattr(record, name) for record in self.records]

    def csv_header(self) -> list[str]:
        return STUDY_COLUMNS

    def csv_rows(self) -> Iterable[Sequence]:
        for record in self.records:
            yield [getattr(record, name) for name in STUDY_COLUMNS]

    def summary(self) -> dict:
        return {
            "base_energy": self.base_energy,
            "n": self.column("n"),
            "e_h1_ratios": pairwise_ratios(self.column("e_h1")),
            "energy_gap_ratios": pairwise_ratios(self.column("energy_gap")),
            "trace_gap_p2_ratios": pairwise_ratios(self.column("trace_gap_p2")),
            "trace_gap_p4_ratios": pairwise_ratios(self.column("trace_gap_p4")),
        }


class KappaRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    profile: str
    nx: int
    status: str
    h2_norm: float
    surrogate_lower: Optional[float] = None
    surrogate_upper: Optional[float] = None
    surrogate_total: Optional[float] = None
    masked_fraction: Optional[float] = None
    interface_l4: Optional[float] = None
    top_l4: Optional[float] = None
    reason: str = ""


KAPPA_COLUMNS = list(KappaRecord.model_fields)


class KappaTable:
    """H2 surrogates per profile and mesh level."""

    def __init__(self, records: Iterable[KappaRecord], kappa: float):
        self.records = sorted(records, key=lambda record: (record.profile, record.nx))
        self.kappa = kappa

    def csv_header(self) -> list[str]:
        return KAPPA_COLUMNS

    def csv_rows(self) -> Iterable[Sequence]:
        for record in self.records:
            yield [getattr(record, name) for name in KAPPA_COLUMNS]

    def summary(self) -> dict:
        per_profile: dict[str, dict] = {}
        for name in sorted({record.profile for record in self.records}):
            rows = [r for r in self.records if r.profile == name and r.status == "ok"]
            if not rows:
                reasons = [r.reason for r in self.records if r.profile == name]
                per_profile[name] = {"status": "excluded", "reason": reasons[0] if reasons else ""}
                continue
            totals = [r.surrogate_total for r in rows]
            per_profile[name] = {
                "status": "ok",
                "max": max(totals),
                "finest_over_coarsest": _level_ratio(totals[0], totals[-1]),
                "masked_fraction": max(r.masked_fraction for r in rows),
                "finite": bool(np.all(np.isfinite(totals))),
            }
        maxima = [entry["max"] for entry in per_profile.values() if entry["status"] == "ok"]
        return {
            "kappa": self.kappa,
            "family_max": max(maxima) if maxima else None,
            "profiles": per_profile,
        }


def _level_ratio(coarsest: float, finest: float) -> float:
    if coarsest < 1e-12:
        return 1.0 if finest < 1e-12 else float("inf")
    return finest / coarsest


class RefinementRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    nx: int
    h: float
    energy: float
    cg_iters: int
    flux_jump_l2: float
    identity_relative: Optional[float] = None
    psi_linf_error: Optional[float] = None
    psi_l2_error: Optional[float] = None
    energy_error: Optional[float] = None


REFINEMENT_COLUMNS = list(RefinementRecord.model_fields)
_ORDER_COLUMNS = ("flux_jump_l2", "identity_relative", "psi_l2_error", "energy_error")


class RefinementTable:
    """Mesh-refinement rows sorted by nx, with fitted orders."""

    def __init__(self, records: Iterable[RefinementRecord]):
        self.records = sorted(records, key=lambda record: record.nx)

    def column(self, name: str) -> list:
        return [getattr(record, name) for record in self.records]

    def csv_header(self) -> list[str]:
        return REFINEMENT_COLUMNS

    def csv_rows(self) -> Iterable[Sequence]:
        for record in self.records:
            yield [getattr(record, name) for name in REFINEMENT_COLUMNS]

    def orders(self) -> dict[str, Optional[float]]:
        spacings = self.column("h")
        return {name: fit_order(spacings, self.column(name)) for name in _ORDER_COLUMNS}


# ---------------------------------------------------------------------------
# Study drivers
# ---------------------------------------------------------------------------

def _solve_all(
    profiles: Sequence[Profile],
    settings: SolverSettings,
    n1: int,
    n2: int,
    threads: int,
    eps_sign: Optional[float],
    eps_touch: Optional[float],
) -> list[SolveResult]:
    def solve(profile: Profile) -> SolveResult:
        return run_solve(profile, settings, n1, n2, eps_sign=eps_sign, eps_touch=eps_touch)

    if threads <= 1:
        return [solve(profile) for profile in profiles]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(solve, profiles))


@dataclass(frozen=True)
class ComparisonBox:
    """Uniform grid on D x (-H, M)."""

    x: np.ndarray
    z: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        wx = trapezoid_weights(self.x.size, self.x[1] - self.x[0])
        wz = trapezoid_weights(self.z.size, self.z[1] - self.z[0])
        return np.outer(wx, wz)


def resample_zero_extended(field: Field, box: ComparisonBox) -> np.ndarray:
    """
    Bilinear interpolant of a nodal field on the box grid, zero outside Omega(u).

    Element sides are vertical, so along a fixed x the isoparametric interpolant is
    piecewise linear in z between the interpolated node rows.
    """
    mesh = field.mesh
    grid = field.grid
    dx = mesh.x[1] - mesh.x[0]
    cell = np.clip(np.floor((box.x - mesh.x[0]) / dx).astype(int), 0, mesh.nx - 1)
    t = (box.x - mesh.x[cell]) / dx

    out = np.zeros((box.x.size, box.z.size))
    for k in range(box.x.size):
        i, s = cell[k], t[k]
        z_col = (1.0 - s) * mesh.z[i] + s * mesh.z[i + 1]
        f_col = (1.0 - s) * grid[i] + s * grid[i + 1]
        inside = (box.z >= z_col[0]) & (box.z <= z_col[-1])
        out[k, inside] = np.interp(box.z[inside], z_col, f_col)
    return out


def box_h1_norm(values: np.ndarray, box: ComparisonBox) -> float:
    """Trapezoidal H1 norm of gridded values; derivatives by np.gradient."""
    hx, hz = box.x[1] - box.x[0], box.z[1] - box.z[0]
    d_x, d_z = np.gradient(values, hx, hz)
    return float(np.sqrt(np.sum(box.weights * (values**2 + d_x**2 + d_z**2))))


def stability_study(
    base: Profile,
    perturb: Profile,
    schedule: Sequence[int],
    settings: SolverSettings,
    n1: int,
    n2: int,
    threads: int = 1,
    eps_sign: Optional[float] = None,
    eps_touch: Optional[float] = None,
) -> StudyTable:
    """
    Solve on v_n = base + w / n and compare with the base solution.

    All solves share one grid. Each chi_n is zero-extended to the box
    D x (-H, M), M taken over the whole family, and resampled on a grid twice
    as fine as the solves.

    Args:
        base: Base profile v
        perturb: Direction w on the same grid
        schedule: Values of n
        settings: Solver settings
        n1, n2: Vertical cells per layer
        threads: Worker threads for the independent solves

    Returns:
        StudyTable sorted by n

    Raises:
        InadmissibleProfileError: If some v_n is inadmissible (carries its index)
    """
    schedule = sorted(set(int(n) for n in schedule))
    family: list[Profile] = []
    for index, n in enumerate(schedule):
        try:
            member = base.perturbed(perturb, 1.0 / n)
        except ProfileError as e:
            raise InadmissibleProfileError(f"perturbed profile n={n} is invalid: {e}", index=index) from e
        admissibility = classify(member, eps_sign=eps_sign, eps_touch=eps_touch)
        if not admissibility.admissible:
            raise InadmissibleProfileError(
                f"perturbed profile n={n} is inadmissible: {'; '.join(admissibility.reasons)}",
                admissibility=admissibility,
                index=index,
            )
        family.append(member)

    logger.info(f"Stability study over n={schedule} on {base.nx}x({n1}+{n2})")
    results = _solve_all([base, *family], settings, n1, n2, threads, eps_sign, eps_touch)
    base_result, member_results = results[0], results[1:]

    params = base.params
    M = max(build_domain_summary(profile).M for profile in [base, *family])
    box = ComparisonBox(
        x=np.linspace(-params.L, params.L, 2 * base.nx + 1),
        z=np.linspace(-params.H, M, 2 * (n1 + n2) + 1),
    )
    lift = LiftSpec.from_params(params)
    base_chi = resample_zero_extended(base_result.chi, box)
    X, Z = np.meshgrid(box.x, box.z, indexing="ij")
    base_h = np.asarray(eval_h(lift, base, X, Z))
    base_top = trace_gradient(base_result.psi, where="top")
    base_interface = trace_gradient(base_result.psi, where="interface_upper")
    base_energy = base_result.report.energy_psi

    records = []
    for n, member, result in zip(schedule, family, member_results):
        top = trace_gradient(result.psi, where="top")
        interface = trace_gradient(result.psi, where="interface_upper")
        member_h = np.asarray(eval_h(lift, member, X, Z))
        records.append(
            StudyRecord(
                n=n,
                t=1.0 / n,
                e_h1=box_h1_norm(resample_zero_extended(result.chi, box) - base_chi, box),
                energy=result.report.energy_psi,
                energy_gap=abs(result.report.energy_psi - base_energy),
                trace_gap_p2=trace_gap(top, base_top, 2),
                trace_gap_p4=trace_gap(top, base_top, 4),
                interface_gap_p2=trace_gap(interface, base_interface, 2),
                interface_gap_p4=trace_gap(interface, base_interface, 4),
                lift_gap_h1=box_h1_norm(member_h - base_h, box),
                lift_energy=lift_energy(lift, member, params.sigma2),
            )
        )
    return StudyTable(records, base_energy=base_energy)


def kappa_family_study(
    family: Sequence[str],
    params: PhysicalParams,
    levels: Sequence[int],
    settings: SolverSettings,
    kappa: float,
    threads: int = 1,
    eps_sign: Optional[float] = None,
    eps_touch: Optional[float] = None,
) -> KappaTable:
    """
    H2 surrogates of psi per layer for each builtin profile and mesh level (n1 = n2 = nx).

    Profiles with ||u||_H2 > kappa or an inadmissible classification are
    excluded with a reason.
    """
    levels = sorted(set(int(level) for level in levels))
    records: list[KappaRecord] = []
    jobs: list[tuple[str, int, Profile]] = []

    for name in family:
        for nx in levels:
            profile = builtin_profile(name, params, nx)
            norm = profile_norms(profile).h2
            reason = ""
            if norm > kappa:
                reason = f"||u||_H2 = {norm:.6g} exceeds kappa = {kappa:.6g}"
            else:
                admissibility = classify(profile, eps_sign=eps_sign, eps_touch=eps_touch)
                if not admissibility.admissible:
                    reason = f"inadmissible: {'; '.join(admissibility.reasons)}"
            if reason:
                logger.warning(f"Excluding {name} at nx={nx}: {reason}")
                records.append(KappaRecord(profile=name, nx=nx, status="excluded", h2_norm=norm, reason=reason))
            else:
                jobs.append((name, nx, profile))

    def measure(job: tuple[str, int, Profile]) -> KappaRecord:
        name, nx, profile = job
        result = run_solve(profile, settings, nx, nx, eps_sign=eps_sign, eps_touch=eps_touch)
        norm = profile_norms(profile).h2
        try:
            lower, masked = h2_surrogate(result.psi, layer=Layer.LOWER)
        except DiagnosticsError as e:
            return KappaRecord(profile=name, nx=nx, status="excluded", h2_norm=norm, reason=str(e))
        upper, _ = h2_surrogate(result.psi, layer=Layer.UPPER)
        return KappaRecord(
            profile=name,
            nx=nx,
            status="ok",
            h2_norm=norm,
            surrogate_lower=lower,
            surrogate_upper=upper,
            surrogate_total=lower + upper,
            masked_fraction=masked,
            interface_l4=trace_gradient(result.psi, where="interface_upper").norm_l4,
            top_l4=trace_gradient(result.psi, where="top").norm_l4,
        )

    if threads <= 1:
        records.extend(measure(job) for job in jobs)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records.extend(pool.map(measure, jobs))
    return KappaTable(records, kappa=kappa)


def refinement_study(
    factory: Callable[[int], Profile],
    levels: Sequence[int],
    settings: SolverSettings,
    threads: int = 1,
    eps_sign: Optional[float] = None,
    eps_touch: Optional[float] = None,
) -> RefinementTable:
    """
    Solve on nx = n1 = n2 for each level and record energies, flux residuals and,
    for flat profiles with insulated sides, errors against the closed form.
    """
    levels = sorted(set(int(level) for level in levels))
    profiles = [factory(nx) for nx in levels]

    def solve(profile: Profile) -> SolveResult:
        return run_solve(profile, settings, profile.nx, profile.nx, eps_sign=eps_sign, eps_touch=eps_touch)

    if threads <= 1:
        results = [solve(profile) for profile in profiles]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, profiles))

    records = []
    for profile, result in zip(profiles, results):
        report = result.report
        identity = None
        if result.admissibility.classification == AdmissibilityClass.INTERIOR_S:
            identity = identity_check(result.chi).relative_residual

        linf = l2 = energy_error = None
        if settings.lateral_bc == "insulated" and not np.any(profile.u):
            exact = two_layer_flat_solution(profile.params)
            linf, l2 = flat_errors(result, exact)
            energy_error = abs(report.energy_psi - exact.energy)

        records.append(
            RefinementRecord(
                nx=profile.nx,
                h=profile.dx,
                energy=report.energy_psi,
                cg_iters=report.cg_iters,
                flux_jump_l2=report.flux_jump_l2,
                identity_relative=identity,
                psi_linf_error=linf,
                psi_l2_error=l2,
                energy_error=energy_error,
            )
        )
        logger.info(f"Refinement level nx={profile.nx}: energy {report.energy_psi:.10g}")
    return RefinementTable(records)
