"""
Interface-fitted, terrain-following quadrilateral mesh of Omega(u).

Column i carries n1 + 1 equispaced nodes on [-H, u(x_i)] and n2 more on
[u(x_i), u(x_i) + d]; row j = n1 lies on the interface. Nodes are numbered
column-major, p = i * (n1 + n2 + 1) + j, and elements likewise,
e = i * (n1 + n2) + j.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence, TYPE_CHECKING

import numpy as np

from errors import ConfigError, DegenerateElementError
from geometry import Profile, default_eps_touch
from utils import array_digest

if TYPE_CHECKING:
    from solver import Field

logger = logging.getLogger(__name__)


class NodeTag(IntEnum):
    INTERIOR = 0
    INTERFACE = 1
    BOTTOM = 2
    SIDE = 3
    TOP = 4


class Layer(IntEnum):
    LOWER = 1
    UPPER = 2


# 2x2 Gauss rule on the reference square [0, 1]^2, points counter-clockwise.
_G = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
GAUSS_POINTS = np.array([[_G[0], _G[0]], [_G[1], _G[0]], [_G[1], _G[1]], [_G[0], _G[1]]])
GAUSS_WEIGHTS = np.full(4, 0.25)


def shape_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points, shape (..., 4)."""
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def shape_gradients(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (..., 2, 4): [d/dxi, d/deta] x node."""
    d_xi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    d_eta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return np.stack([d_xi, d_eta], axis=-2)


SHAPE_AT_GAUSS = shape_values(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])
DSHAPE_AT_GAUSS = shape_gradients(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])


@dataclass(frozen=True)
class QuadElement:
    index: int
    nodes: tuple[int, int, int, int]
    layer: Layer
    sigma: float
    active: bool


class ElementQuadrature(NamedTuple):
    points: np.ndarray          # (4, 2) physical Gauss points
    weights: np.ndarray         # (4,) weight * |J|
    gradient_maps: np.ndarray   # (4, 2, 2) reference -> physical gradient


class MeshQuadrature(NamedTuple):
    """Gauss data for every element; inactive elements carry zero weights."""

    points: np.ndarray          # (ne, 4, 2)
    weights: np.ndarray         # (ne, 4)
    gradients: np.ndarray       # (ne, 4, 4, 2) physical shape gradients [e, g, node, dir]


def _jacobian_data(X: np.ndarray, Z: np.ndarray):
    """Jacobians (..., 4, 2, 2) and determinants (..., 4) for element coordinates (..., 4)."""
    coords = np.stack([X, Z], axis=-1)                          # (..., 4, 2)
    jac = np.einsum("gra,...ac->...grc", DSHAPE_AT_GAUSS, coords)     # (..., 4, 2, 2)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return jac, det


def _inverse(jac: np.ndarray, det: np.ndarray) -> np.ndarray:
    safe = np.where(det > 0, det, 1.0)
    inv = np.empty_like(jac)
    inv[..., 0, 0] = jac[..., 1, 1]
    inv[..., 0, 1] = -jac[..., 0, 1]
    inv[..., 1, 0] = -jac[..., 1, 0]
    inv[..., 1, 1] = jac[..., 0, 0]
    return inv / safe[..., None, None]


@dataclass(frozen=True, eq=False)
class LayeredMesh:
    """Terrain-following mesh over the gap and the plate."""

    profile: Profile
    n1: int
    n2: int
    x: np.ndarray               # (nx+1,)
    z: np.ndarray               # (nx+1, ny+1)
    tags: np.ndarray            # (nx+1, ny+1) NodeTag values
    collapsed: np.ndarray       # (nx+1,) bool
    connectivity: np.ndarray    # (ne, 4)
    element_layer: np.ndarray   # (ne,)
    element_sigma: np.ndarray   # (ne,)
    active: np.ndarray          # (ne,) bool
    eps_touch: float

    @property
    def nx(self) -> int:
        return self.x.size - 1

    @property
    def ny(self) -> int:
        return self.n1 + self.n2

    @property
    def n_nodes(self) -> int:
        return self.z.size

    @property
    def n_elements(self) -> int:
        return self.connectivity.shape[0]

    def node_id(self, i: int, j: int) -> int:
        return i * (self.ny + 1) + j

    def element_id(self, i: int, j: int) -> int:
        return i * self.ny + j

    @cached_property
    def node_x(self) -> np.ndarray:
        return np.repeat(self.x, self.ny + 1)

    @cached_property
    def node_z(self) -> np.ndarray:
        return self.z.ravel()

    @cached_property
    def node_tags(self) -> np.ndarray:
        return self.tags.ravel()

    @cached_property
    def node_layer(self) -> np.ndarray:
        """1 below the interface, 0 on it, 2 above, per node."""
        j = np.tile(np.arange(self.ny + 1), self.nx + 1)
        return np.where(j < self.n1, 1, np.where(j == self.n1, 0, 2))

    @cached_property
    def node_active(self) -> np.ndarray:
        counts = np.bincount(self.connectivity[self.active].ravel(), minlength=self.n_nodes)
        return counts > 0

    @cached_property
    def signature(self) -> str:
        return f"{self.nx}x{self.n1}+{self.n2}:{array_digest(self.z)}"

    def element(self, e: int) -> QuadElement:
        return QuadElement(
            index=int(e),
            nodes=tuple(int(p) for p in self.connectivity[e]),
            layer=Layer(int(self.element_layer[e])),
            sigma=float(self.element_sigma[e]),
            active=bool(self.active[e]),
        )

    @cached_property
    def quadrature(self) -> MeshQuadrature:
        """
        Gauss data for all elements.

        Raises:
            DegenerateElementError: If an active element has a non-positive Jacobian
        """
        X = self.node_x[self.connectivity]
        Z = self.node_z[self.connectivity]
        jac, det = _jacobian_data(X, Z)

        bad = self.active & np.any(det <= 0.0, axis=1)
        if np.any(bad):
            e = int(np.flatnonzero(bad)[0])
            raise DegenerateElementError(f"element {e} has a non-positive Jacobian", element=e)

        inv = _inverse(jac, det)
        gradients = np.einsum("egcr,gra->egac", inv, DSHAPE_AT_GAUSS)
        weights = np.where(self.active[:, None], GAUSS_WEIGHTS * det, 0.0)
        gradients = np.where(self.active[:, None, None, None], gradients, 0.0)
        points = np.stack(
            [np.einsum("ga,ea->eg", SHAPE_AT_GAUSS, X), np.einsum("ga,ea->eg", SHAPE_AT_GAUSS, Z)], axis=-1
        )
        return MeshQuadrature(points=points, weights=weights, gradients=gradients)

    def element_areas(self) -> np.ndarray:
        return self.quadrature.weights.sum(axis=1)

    def gradients_at(self, elements: np.ndarray, xi: float, eta: float) -> np.ndarray:
        """Physical shape gradients at one reference point of each listed element, shape (k, 4, 2)."""
        elements = np.asarray(elements, dtype=int)
        nodes = self.connectivity[elements]
        coords = np.stack([self.node_x[nodes], self.node_z[nodes]], axis=-1)   # (k, 4, 2)
        ref = shape_gradients(np.float64(xi), np.float64(eta))                 # (2, 4)
        jac = np.einsum("ra,kac->krc", ref, coords)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = _inverse(jac, det)
        return np.einsum("kcr,ra->kac", inv, ref)


def build_mesh(profile: Profile, n1: int, n2: int, eps_touch: Optional[float] = None) -> LayeredMesh:
    """
    Build the terrain-following mesh of Omega(u).

    Collapsed columns (u + H <= eps_touch) put all lower nodes at z = -H and
    tag them as bottom; lower cells between two collapsed columns are inactive.

    Args:
        profile: Sampled deflection; its grid fixes the columns
        n1: Vertical cells in the gap layer
        n2: Vertical cells in the plate

    Returns:
        LayeredMesh

    Raises:
        ConfigError: If n1 or n2 is smaller than 1
    """
    if int(n1) < 1 or int(n2) < 1:
        raise ConfigError(f"n1 and n2 must be at least 1, got n1={n1}, n2={n2}")
    n1, n2 = int(n1), int(n2)
    params = profile.params
    if eps_touch is None:
        eps_touch = default_eps_touch(params)

    nx, ny = profile.nx, n1 + n2
    collapsed = profile.u + params.H <= eps_touch
    u = np.where(collapsed, -params.H, profile.u)
    gap = u + params.H

    z = np.empty((nx + 1, ny + 1))
    z[:, : n1 + 1] = -params.H + np.outer(gap, np.arange(n1 + 1) / n1)
    z[:, n1:] = u[:, None] + np.outer(np.ones(nx + 1), np.arange(n2 + 1) * params.d / n2)
    z[:, n1] = u

    tags = np.full((nx + 1, ny + 1), NodeTag.INTERIOR, dtype=int)
    tags[:, n1] = NodeTag.INTERFACE
    tags[[0, nx], :] = NodeTag.SIDE
    tags[:, 0] = NodeTag.BOTTOM
    tags[:, ny] = NodeTag.TOP
    tags[collapsed, : n1 + 1] = NodeTag.BOTTOM

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    stride = ny + 1
    base = ii * stride + jj
    connectivity = np.stack([base, base + stride, base + stride + 1, base + 1], axis=1)

    lower = jj < n1
    element_layer = np.where(lower, Layer.LOWER, Layer.UPPER).astype(int)
    element_sigma = np.where(lower, params.sigma1, params.sigma2)
    active = ~(lower & collapsed[ii] & collapsed[ii + 1])

    mesh = LayeredMesh(
        profile=profile,
        n1=n1,
        n2=n2,
        x=profile.x.copy(),
        z=z,
        tags=tags,
        collapsed=collapsed,
        connectivity=connectivity,
        element_layer=element_layer,
        element_sigma=element_sigma,
        active=active,
        eps_touch=eps_touch,
    )
    logger.info(
        f"Built mesh {nx}x({n1}+{n2}): {mesh.n_nodes} nodes, {int(active.sum())} active elements, "
        f"{int(collapsed.sum())} collapsed columns"
    )
    return mesh


def element_quadrature(elem: QuadElement, mesh: LayeredMesh) -> ElementQuadrature:
    """
    2x2 Gauss data of one element.

    Raises:
        DegenerateElementError: If the Jacobian is non-positive at a Gauss point
    """
    nodes = np.array(elem.nodes)
    X, Z = mesh.node_x[nodes], mesh.node_z[nodes]
    jac, det = _jacobian_data(X, Z)
    if np.any(det <= 0.0):
        raise DegenerateElementError(f"element {elem.index} has a non-positive Jacobian", element=elem.index)
    points = np.stack([SHAPE_AT_GAUSS @ X, SHAPE_AT_GAUSS @ Z], axis=-1)
    return ElementQuadrature(points=points, weights=GAUSS_WEIGHTS * det, gradient_maps=_inverse(jac, det))


@dataclass(frozen=True, eq=False)
class RectangleGrids:
    """Nodal values reindexed onto R1 = D x (0, 1) and R2 = D x (1, 1 + d)."""

    x: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    phi1: np.ma.MaskedArray     # (nx+1, n1+1), collapsed columns masked
    phi2: np.ndarray            # (nx+1, n2+1)


def transform_field_to_rectangles(field: "Field", mesh: LayeredMesh) -> RectangleGrids:
    """
    Pull a nodal field back to the reference rectangles.

    Vertical nodes are equispaced per layer, so Phi_i = chi_i o T_i^{-1} is a
    plain reindexing of the nodal values.
    """
    grid = np.asarray(field.values).reshape(mesh.nx + 1, mesh.ny + 1)
    mask = np.repeat(mesh.collapsed[:, None], mesh.n1 + 1, axis=1)
    return RectangleGrids(
        x=mesh.x,
        eta1=np.linspace(0.0, 1.0, mesh.n1 + 1),
        eta2=np.linspace(1.0, 1.0 + mesh.profile.params.d, mesh.n2 + 1),
        phi1=np.ma.MaskedArray(grid[:, : mesh.n1 + 1].copy(), mask=mask),
        phi2=grid[:, mesh.n1 :].copy(),
    )


class MeshTable:
    """Node dump with columns i,j,x,z,tag,layer,active."""

    def __init__(self, mesh: LayeredMesh):
        self.mesh = mesh

    def csv_header(self) -> list[str]:
        return ["i", "j", "x", "z", "tag", "layer", "active"]

    def csv_rows(self) -> Iterable[Sequence]:
        mesh = self.mesh
        for p in range(mesh.n_nodes):
            i, j = divmod(p, mesh.ny + 1)
            yield (
                i,
                j,
                float(mesh.node_x[p]),
                float(mesh.node_z[p]),
                NodeTag(int(mesh.node_tags[p])).name.lower(),
                int(mesh.node_layer[p]),
                int(mesh.node_active[p]),
            )
