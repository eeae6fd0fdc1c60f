"""Lowest-order virtual element spaces and their computable projections.

Three spaces live on each polygon ``K`` with ``m`` edges:

* velocity: one DOF per edge, the mean normal flux ``(1/|e|) int_e v.n``. Local
  DOFs use the outward normal of ``K``; the global DOF uses the edge's global
  normal, so ``local = sign(K, e) * global``.
* pressure: the cell mean.
* concentration (enhanced nonconforming space): one DOF per edge, the edge
  mean. At this order the L2 projection onto affine functions coincides with
  the elliptic projection.

Polynomials are expanded in scaled monomials ``{1, xi, eta}`` with
``xi = (x - x_K) / h_K`` and ``eta = (y - y_K) / h_K``.

All functions broadcast over leading batch dimensions of the cell geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import CellGeometry, PolygonalMesh
from .quadrature import polygon_points


class DegreeNotImplementedError(NotImplementedError):
    """Only the lowest order (k = 0) spaces are available."""


def _check_degree(k: int) -> None:
    if k != 0:
        raise DegreeNotImplementedError(f"degree k={k} requested; only k=0 is implemented")


@dataclass(frozen=True)
class SpaceLayout:
    """Global numbering of velocity, pressure and concentration DOFs."""

    n_velocity: int
    n_pressure: int
    n_concentration: int
    velocity_boundary: np.ndarray
    cell_offsets: np.ndarray
    cell_dofs: np.ndarray
    cell_signs: np.ndarray

    @property
    def free_velocity(self) -> np.ndarray:
        return np.flatnonzero(~self.velocity_boundary)

    def local_dofs(self, k: int) -> np.ndarray:
        return self.cell_dofs[self.cell_offsets[k] : self.cell_offsets[k + 1]]


def build_layout(mesh: PolygonalMesh, k: int = 0) -> SpaceLayout:
    _check_degree(k)
    return SpaceLayout(
        n_velocity=mesh.n_edges,
        n_pressure=mesh.n_cells,
        n_concentration=mesh.n_edges,
        velocity_boundary=mesh.boundary.copy(),
        cell_offsets=mesh.cell_offsets,
        cell_dofs=mesh.cell_edges,
        cell_signs=mesh.cell_signs,
    )


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def velocity_projector(geom: CellGeometry, k: int = 0):
    """Return ``(pi0_velocity, div_functional)`` acting on outward flux DOFs.

    The divergence is constant, ``sum_e h_e v_e / |K|``. Its constant vector
    projection follows from ``int_K v = sum_e h_e v_e (x_e - x_K)`` where
    ``x_e`` is the edge midpoint (``v.n`` is constant on each edge).
    """
    _check_degree(k)
    area = geom.area[..., None]
    div = geom.edge_length / area
    rel = geom.midpoint - geom.centroid[..., None, :]
    pi0 = np.swapaxes(geom.edge_length[..., None] * rel, -1, -2) / area[..., None]
    return pi0, div


def velocity_dofs_of_constants(geom: CellGeometry) -> np.ndarray:
    """``(..., m, 2)``: outward flux DOFs of the unit vectors e_x, e_y."""
    return geom.normal


def monomials(geom: CellGeometry, points: np.ndarray) -> np.ndarray:
    """Scaled monomials ``{1, xi, eta}`` at ``points (..., n, 2)`` -> ``(..., n, 3)``."""
    rel = (points - geom.centroid[..., None, :]) / geom.diameter[..., None, None]
    return np.concatenate([np.ones_like(rel[..., :1]), rel], axis=-1)


def concentration_dofs_of_monomials(geom: CellGeometry) -> np.ndarray:
    """``(..., m, 3)``: edge means of the scaled monomials (affine -> midpoint)."""
    return monomials(geom, geom.midpoint)


def concentration_projectors(geom: CellGeometry, k: int = 0):
    """Return ``(pi_nabla_c, pi0_grad_c, pi0_c)`` acting on edge-mean DOFs.

    The gradient of the elliptic projection is ``sum_e h_e z_e n_e / |K|``; the
    constant is fixed by matching the boundary average. ``pi0_c`` equals
    ``pi_nabla_c`` in the enhanced space.
    """
    _check_degree(k)
    area = geom.area[..., None, None]
    grad = np.swapaxes(geom.edge_length[..., None] * geom.normal, -1, -2) / area
    rel = geom.midpoint - geom.centroid[..., None, :]
    moment = np.einsum("...m,...md->...d", geom.edge_length, rel)
    const = (geom.edge_length - np.einsum("...d,...dm->...m", moment, grad)) / geom.perimeter[..., None]
    hk = geom.diameter[..., None, None]
    pi_nabla = np.concatenate([const[..., None, :], hk * grad], axis=-2)
    return pi_nabla, grad, pi_nabla


def _identity_like(m: int, batch_shape) -> np.ndarray:
    return np.broadcast_to(np.eye(m), (*batch_shape, m, m))


@dataclass(frozen=True)
class ElementOperators:
    """Projector, kernel and quadrature data for a stack of cells.

    Shapes carry a leading batch axis ``(nc, ...)`` when built for a mesh group;
    for a single cell they have no batch axis.
    """

    geometry: CellGeometry
    pi0_velocity: np.ndarray  # (..., 2, m)
    div_functional: np.ndarray  # (..., m)
    pi_nabla_c: np.ndarray  # (..., 3, m)
    pi0_grad_c: np.ndarray  # (..., 2, m)
    pi0_c: np.ndarray  # (..., 3, m)
    stab_kernel_v: np.ndarray  # (..., m, m): I - D_v Pi0
    stab_kernel_c_l2: np.ndarray  # (..., m, m): I - D_c Pi0_1
    stab_kernel_c_grad: np.ndarray  # (..., m, m): I - D_c Pi_nabla
    quad_points: np.ndarray  # (..., nq, 2)
    quad_weights: np.ndarray  # (..., nq)
    quad_monomials: np.ndarray  # (..., nq, 3)

    @property
    def area(self) -> np.ndarray:
        return self.geometry.area

    @property
    def m(self) -> int:
        return self.geometry.n_edges

    @property
    def monomial_moments(self) -> np.ndarray:
        """``int_K m_a`` for the three scaled monomials."""
        return np.einsum("...q,...qa->...a", self.quad_weights, self.quad_monomials)

    def concentration_poly(self, c_local: np.ndarray) -> np.ndarray:
        """Monomial coefficients of the affine reconstruction of ``c``."""
        return np.einsum("...am,...m->...a", self.pi0_c, c_local)

    def concentration_at_quad(self, c_local: np.ndarray) -> np.ndarray:
        return np.einsum("...qa,...a->...q", self.quad_monomials, self.concentration_poly(c_local))

    def concentration_mean(self, c_local: np.ndarray) -> np.ndarray:
        """Cell mean of the reconstruction (the constant coefficient)."""
        return self.concentration_poly(c_local)[..., 0]

    def velocity_constant(self, u_local: np.ndarray) -> np.ndarray:
        return np.einsum("...dm,...m->...d", self.pi0_velocity, u_local)


def element_operators(geom: CellGeometry, k: int = 0, quad_degree: int = 6) -> ElementOperators:
    _check_degree(k)
    pi0_v, div = velocity_projector(geom, k)
    pi_n, grad, pi0_c = concentration_projectors(geom, k)
    batch = geom.area.shape
    m = geom.n_edges
    eye = _identity_like(m, batch)
    dv = velocity_dofs_of_constants(geom)
    dc = concentration_dofs_of_monomials(geom)
    ker_v = eye - np.einsum("...id,...dj->...ij", dv, pi0_v)
    ker_c = eye - np.einsum("...ia,...aj->...ij", dc, pi0_c)
    pts, wts = polygon_points(geom, quad_degree)
    return ElementOperators(
        geometry=geom,
        pi0_velocity=pi0_v,
        div_functional=div,
        pi_nabla_c=pi_n,
        pi0_grad_c=grad,
        pi0_c=pi0_c,
        stab_kernel_v=ker_v,
        stab_kernel_c_l2=ker_c,
        stab_kernel_c_grad=ker_c,
        quad_points=pts,
        quad_weights=wts,
        quad_monomials=monomials(geom, pts),
    )


def mesh_operators(mesh: PolygonalMesh, k: int = 0, quad_degree: int = 6) -> tuple[ElementOperators, ...]:
    """Element operators for every cell group of ``mesh`` (same order)."""
    return tuple(element_operators(g.geometry, k, quad_degree) for g in mesh.groups)


# ---------------------------------------------------------------------------
# interpolation helpers (DOFs of given fields)
# ---------------------------------------------------------------------------


def edge_means(mesh: PolygonalMesh, f, degree: int = 8) -> np.ndarray:
    """Edge means of a scalar field ``f(x, y)``."""
    from .quadrature import gauss_legendre_01

    s, w = gauss_legendre_01(degree // 2 + 1)
    a = mesh.vertices[mesh.edges[:, 0]]
    t = mesh.edge_tangent
    pts = a[:, None, :] + s[None, :, None] * t[:, None, :]
    return np.sum(w * f(pts[..., 0], pts[..., 1]), axis=1)


def normal_flux_means(mesh: PolygonalMesh, u, degree: int = 8) -> np.ndarray:
    """Global-normal flux means of a vector field ``u(x, y) -> (ux, uy)``."""
    n = mesh.edge_normal
    return edge_means(
        mesh, lambda x, y: _dot_normal(u(x, y), n), degree
    )


def _dot_normal(val, n):
    ux, uy = val
    return ux * n[:, 0:1] + uy * n[:, 1:2]


def cell_means(mesh: PolygonalMesh, f, degree: int = 8) -> np.ndarray:
    from .quadrature import mesh_quadrature

    q = mesh_quadrature(mesh, degree)
    return q.integrate(mesh, f) / mesh.cell_area
