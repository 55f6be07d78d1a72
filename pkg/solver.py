"""
Discrete variational problem for chi = psi - h.

Assembles the stiffness matrix of the bilinear form int sigma grad(chi) . grad(theta)
over the layered mesh, eliminates Dirichlet nodes and solves with
Jacobi-preconditioned conjugate gradients. psi is reconstructed nodewise as
chi + h.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, cg

from boundary import LiftSpec, eval_h, eval_h_gradient
from config import SolverSettings
from errors import ConvergenceError, InadmissibleProfileError, NegativeCurvatureError
from geometry import Admissibility, AdmissibilityClass, Profile, classify
from mesh import Layer, LayeredMesh, NodeTag, SHAPE_AT_GAUSS, build_mesh

logger = logging.getLogger(__name__)


class FieldKind(str, Enum):
    CHI = "chi"
    H = "h"
    PSI = "psi"


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a LayeredMesh."""

    mesh: LayeredMesh
    values: np.ndarray
    kind: FieldKind
    provenance: tuple[str, str]

    @classmethod
    def on_mesh(cls, mesh: LayeredMesh, values: np.ndarray, kind: FieldKind) -> "Field":
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ValueError(f"expected {mesh.n_nodes} nodal values, got shape {values.shape}")
        return cls(mesh=mesh, values=values, kind=kind, provenance=(mesh.profile.digest, mesh.signature))

    @classmethod
    def from_function(
        cls,
        mesh: LayeredMesh,
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        kind: FieldKind = FieldKind.PSI,
    ) -> "Field":
        """Interpolate func(x, z) at the mesh nodes."""
        values = np.broadcast_to(func(mesh.node_x, mesh.node_z), (mesh.n_nodes,))
        return cls.on_mesh(mesh, np.array(values, dtype=float), kind)

    @classmethod
    def zeros(cls, mesh: LayeredMesh, kind: FieldKind = FieldKind.CHI) -> "Field":
        return cls.on_mesh(mesh, np.zeros(mesh.n_nodes), kind)

    @property
    def grid(self) -> np.ndarray:
        """Values as an (nx+1, ny+1) array indexed by column and row."""
        return self.values.reshape(self.mesh.nx + 1, self.mesh.ny + 1)

    def layer(self, which: int) -> np.ndarray:
        """Column-by-row view restricted to the gap (1) or the plate (2), interface row included."""
        if which == Layer.LOWER:
            return self.grid[:, : self.mesh.n1 + 1]
        if which == Layer.UPPER:
            return self.grid[:, self.mesh.n1 :]
        raise ValueError(f"layer must be 1 or 2, got {which}")


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Stiffness system reduced to the free nodes."""

    mesh: LayeredMesh
    matrix: csr_matrix          # A over free nodes
    rhs: np.ndarray             # b over free nodes
    free: np.ndarray            # free node ids, ascending
    full_matrix: csr_matrix     # before Dirichlet elimination
    full_rhs: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.size


class CGStats(NamedTuple):
    iterations: int
    residual: float


def dirichlet_mask(mesh: LayeredMesh, lateral_bc: str = "lift") -> np.ndarray:
    """Nodes carrying Dirichlet data: bottom, top, collapsed and (for lateral_bc='lift') side nodes."""
    tags = mesh.node_tags
    mask = (tags == NodeTag.BOTTOM) | (tags == NodeTag.TOP) | ~mesh.node_active
    if lateral_bc == "lift":
        mask |= tags == NodeTag.SIDE
    elif lateral_bc != "insulated":
        raise ValueError(f"unknown lateral boundary mode {lateral_bc!r}")
    return mask


def _lift_gradients(mesh: LayeredMesh, lift: LiftSpec, profile: Profile) -> np.ndarray:
    """Analytic grad h at every Gauss point, shape (ne, 4, 2); zero in the gap layer."""
    quad = mesh.quadrature
    grad = np.zeros(quad.points.shape)
    upper = (mesh.element_layer == Layer.UPPER) & mesh.active
    px, pz = quad.points[upper, :, 0], quad.points[upper, :, 1]
    hx, hz = eval_h_gradient(lift, profile, px, pz)
    grad[upper, :, 0] = hx
    grad[upper, :, 1] = hz
    return grad


def gauss_gradients(field: Field) -> np.ndarray:
    """Gradient of the bilinear interpolant at every Gauss point, shape (ne, 4, 2)."""
    mesh = field.mesh
    local = field.values[mesh.connectivity]
    return np.einsum("egac,ea->egc", mesh.quadrature.gradients, local)


def assemble(mesh: LayeredMesh, lift: LiftSpec, profile: Profile, lateral_bc: str = "lift") -> SparseSystem:
    """
    Assemble the reduced stiffness system for chi.

    A[p, q] = sum_e sigma_e int grad(phi_p) . grad(phi_q) and
    b[p] = -sum_e sigma_e int grad(h) . grad(phi_p), Dirichlet rows and
    columns removed.

    Args:
        mesh: Layered mesh
        lift: Lift parameters; grad h is evaluated analytically at Gauss points
        profile: Deflection the lift follows
        lateral_bc: "lift" (psi = h on x = +-L) or "insulated" (free side nodes)

    Returns:
        SparseSystem

    Raises:
        DegenerateElementError: If an active element has a non-positive Jacobian
    """
    quad = mesh.quadrature
    sigma = mesh.element_sigma
    conn = mesh.connectivity
    n = mesh.n_nodes

    local = np.einsum("eg,egac,egbc->eab", quad.weights, quad.gradients, quad.gradients)
    local *= sigma[:, None, None]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    full_matrix = coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    grad_h = _lift_gradients(mesh, lift, profile)
    local_rhs = -sigma[:, None] * np.einsum("eg,egac,egc->ea", quad.weights, quad.gradients, grad_h)
    full_rhs = np.bincount(conn.ravel(), weights=local_rhs.ravel(), minlength=n)

    free = np.flatnonzero(~dirichlet_mask(mesh, lateral_bc))
    matrix = full_matrix[free][:, free].tocsr()
    rhs = full_rhs[free]

    logger.info(f"Assembled system: {free.size} free of {n} nodes, {matrix.nnz} nonzeros")
    return SparseSystem(
        mesh=mesh,
        matrix=matrix,
        rhs=rhs,
        free=free,
        full_matrix=full_matrix,
        full_rhs=full_rhs,
    )


def solve_cg(
    system: SparseSystem,
    tol: float,
    max_iter: int,
    x0: Optional[np.ndarray] = None,
) -> tuple[Field, CGStats]:
    """
    Solve A chi = b by Jacobi-preconditioned conjugate gradients.

    Args:
        system: Reduced system
        tol: Relative residual target, ||A chi - b|| <= tol ||b||
        max_iter: Iteration cap
        x0: Initial guess over the free nodes or over all nodes

    Returns:
        Tuple of (chi field with zero Dirichlet values, CGStats)

    Raises:
        ConvergenceError: If tol is not reached within max_iter
        NegativeCurvatureError: If the matrix is not positive definite
    """
    mesh = system.mesh
    A, b = system.matrix, system.rhs
    values = np.zeros(mesh.n_nodes)
    b_norm = float(np.linalg.norm(b))

    if system.n_free == 0 or b_norm == 0.0:
        logger.info("Right-hand side vanishes: chi = 0")
        return Field.on_mesh(mesh, values, FieldKind.CHI), CGStats(iterations=0, residual=0.0)

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise NegativeCurvatureError(f"non-positive diagonal entry at free index {int(np.argmin(diag))}")

    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape == (mesh.n_nodes,):
            x0 = x0[system.free]

    inv_diag = 1.0 / diag
    preconditioner = LinearOperator(A.shape, matvec=lambda r: inv_diag * r, dtype=float)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, info = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=preconditioner, callback=count)
    residual = float(np.linalg.norm(A @ solution - b) / b_norm)

    if info < 0:
        raise NegativeCurvatureError(f"conjugate gradients broke down (info={info})")
    if info > 0:
        logger.error(f"CG did not converge: residual {residual:.3e} after {iterations} iterations")
        raise ConvergenceError(
            f"CG did not reach tol={tol:.1e} within {max_iter} iterations (residual {residual:.3e})",
            residual=residual,
            iterations=iterations,
        )
    # Started from zero, CG can only lower the quadratic energy on an SPD matrix.
    if x0 is None and 0.5 * solution @ (A @ solution) - b @ solution > 1e-12 * b_norm * np.linalg.norm(solution):
        raise NegativeCurvatureError("quadratic energy increased along the CG iterates")

    values[system.free] = solution
    logger.info(f"CG converged in {iterations} iterations, relative residual {residual:.3e}")
    return Field.on_mesh(mesh, values, FieldKind.CHI), CGStats(iterations=iterations, residual=residual)


def lift_field(mesh: LayeredMesh, lift: LiftSpec, profile: Profile) -> Field:
    """Nodal interpolant of h with exact boundary values V on top and 0 on the bottom."""
    values = np.asarray(eval_h(lift, profile, mesh.node_x, mesh.node_z), dtype=float).copy()
    tags = mesh.node_tags
    values[tags == NodeTag.TOP] = lift.V
    values[tags == NodeTag.BOTTOM] = 0.0
    values[mesh.node_layer != Layer.UPPER] = 0.0
    return Field.on_mesh(mesh, values, FieldKind.H)


def reconstruct_psi(chi: Field, lift: LiftSpec, profile: Profile) -> Field:
    """psi = chi + h nodewise; top nodes get exactly V, bottom and collapsed nodes exactly 0."""
    if chi.kind != FieldKind.CHI:
        raise ValueError(f"reconstruct_psi needs a chi field, got {chi.kind.value}")
    h = lift_field(chi.mesh, lift, profile)
    values = chi.values + h.values
    tags = chi.mesh.node_tags
    values[tags == NodeTag.TOP] = lift.V
    values[tags == NodeTag.BOTTOM] = 0.0
    return Field.on_mesh(chi.mesh, values, FieldKind.PSI)


def dirichlet_energy(field: Field, mesh: Optional[LayeredMesh] = None, sigma=None) -> float:
    """
    (1/2) int sigma |grad v_h|^2 of the bilinear interpolant over active elements.

    Args:
        field: Nodal field
        mesh: Defaults to the field's mesh
        sigma: Per-element coefficients or a scalar; the mesh's sigma if omitted
    """
    mesh = field.mesh if mesh is None else mesh
    sigma = mesh.element_sigma if sigma is None else np.broadcast_to(sigma, (mesh.n_elements,))
    grad = gauss_gradients(field)
    return float(0.5 * np.einsum("e,eg,eg->", sigma, mesh.quadrature.weights, np.sum(grad**2, axis=-1)))


def solution_energy(chi: Field, lift: LiftSpec, profile: Optional[Profile] = None) -> float:
    """
    Energy (1/2) int sigma |grad chi_h + grad h|^2 of the discrete candidate chi_h + h.

    grad h is analytic at Gauss points, so chi = 0 gives the exact lift energy
    up to quadrature and any CG iterate from zero lowers it.
    """
    mesh = chi.mesh
    profile = mesh.profile if profile is None else profile
    grad = gauss_gradients(chi) + _lift_gradients(mesh, lift, profile)
    weights = mesh.quadrature.weights
    return float(0.5 * np.einsum("e,eg,eg->", mesh.element_sigma, weights, np.sum(grad**2, axis=-1)))


def l2_norm(field: Field) -> float:
    mesh = field.mesh
    values = np.einsum("ga,ea->eg", SHAPE_AT_GAUSS, field.values[mesh.connectivity])
    return float(np.sqrt(np.sum(mesh.quadrature.weights * values**2)))


def h1_norm(field: Field) -> float:
    """Full H1 norm of the bilinear interpolant over the active elements."""
    grad = gauss_gradients(field)
    semi_sq = float(np.sum(field.mesh.quadrature.weights * np.sum(grad**2, axis=-1)))
    return float(np.sqrt(l2_norm(field) ** 2 + semi_sq))


class SolveReport(BaseModel):
    """Scalar outcome of one solve."""

    model_config = ConfigDict(frozen=True)

    energy_psi: float
    energy_h: float
    cg_iters: int
    cg_residual: float
    flux_jump_l2: float
    flux_jump_linf: float
    h1_norm_chi: float
    admissibility: AdmissibilityClass
    lateral_bc: str
    nx: int
    n1: int
    n2: int
    n_nodes: int
    n_free: int
    profile_digest: str
    wall_time: Optional[float] = None


@dataclass(frozen=True, eq=False)
class SolveResult:
    mesh: LayeredMesh
    chi: Field
    h: Field
    psi: Field
    report: SolveReport
    admissibility: Admissibility


def run_solve(
    profile: Profile,
    settings: SolverSettings,
    n1: int,
    n2: int,
    eps_sign: Optional[float] = None,
    eps_touch: Optional[float] = None,
    timing: bool = False,
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """
    Classify, mesh, assemble, solve and reconstruct for one profile.

    Raises:
        InadmissibleProfileError: If the profile fails the admissibility conditions
        ConvergenceError: If CG does not converge
        NegativeCurvatureError: If the discrete energy exceeds the lift energy
    """
    # diagnostics imports this module
    from diagnostics import flux_jump_residual

    started = time.perf_counter()
    admissibility = classify(profile, eps_sign=eps_sign, eps_touch=eps_touch)
    if not admissibility.admissible:
        raise InadmissibleProfileError(
            f"profile is inadmissible: {'; '.join(admissibility.reasons)}", admissibility=admissibility
        )

    lift = LiftSpec.from_params(profile.params)
    mesh = build_mesh(profile, n1, n2, eps_touch=eps_touch)
    system = assemble(mesh, lift, profile, lateral_bc=settings.lateral_bc)
    chi, stats = solve_cg(system, settings.cg_tol, settings.max_iter, x0=x0)
    psi = reconstruct_psi(chi, lift, profile)
    h = lift_field(mesh, lift, profile)

    energy_psi = solution_energy(chi, lift, profile)
    energy_h = solution_energy(Field.zeros(mesh), lift, profile)
    if energy_psi > energy_h + 10.0 * settings.cg_tol * energy_h:
        raise NegativeCurvatureError(
            f"discrete energy {energy_psi:.6g} exceeds the lift energy {energy_h:.6g}"
        )

    flux_l2, flux_linf = flux_jump_residual(psi, mesh)
    elapsed = time.perf_counter() - started

    report = SolveReport(
        energy_psi=energy_psi,
        energy_h=energy_h,
        cg_iters=stats.iterations,
        cg_residual=stats.residual,
        flux_jump_l2=flux_l2,
        flux_jump_linf=flux_linf,
        h1_norm_chi=h1_norm(chi),
        admissibility=admissibility.classification,
        lateral_bc=settings.lateral_bc,
        nx=mesh.nx,
        n1=mesh.n1,
        n2=mesh.n2,
        n_nodes=mesh.n_nodes,
        n_free=system.n_free,
        profile_digest=profile.digest,
        wall_time=elapsed if timing else None,
    )
    logger.info(f"Solved {mesh.nx}x({n1}+{n2}): energy {energy_psi:.10g} (lift {energy_h:.10g})")
    return SolveResult(mesh=mesh, chi=chi, h=h, psi=psi, report=report, admissibility=admissibility)


class FieldTable:
    """Nodal dump with columns x,z,layer,chi,h,psi."""

    def __init__(self, chi: Field, h: Field, psi: Field):
        self.chi, self.h, self.psi = chi, h, psi

    def csv_header(self) -> list[str]:
        return ["x", "z", "layer", "chi", "h", "psi"]

    def csv_rows(self) -> Iterable[Sequence]:
        mesh = self.chi.mesh
        for p in range(mesh.n_nodes):
            yield (
                float(mesh.node_x[p]),
                float(mesh.node_z[p]),
                int(mesh.node_layer[p]),
                float(self.chi.values[p]),
                float(self.h.values[p]),
                float(self.psi.values[p]),
            )
