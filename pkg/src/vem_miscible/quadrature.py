"""Quadrature on segments, triangles and polygons.

Triangles use collapsed (Stroud conical) Gauss rules, which are exact to any
requested degree. Polygons are fan-triangulated from the centroid, or from a
kernel point when the centroid does not see the whole boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import CellGeometry, PolygonalMesh, kernel_chebyshev


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def integrate(self, f) -> float:
        vals = f(*self.points.T) if self.points.ndim == 2 else f(self.points)
        return float(np.dot(self.weights, np.broadcast_to(vals, self.weights.shape)))


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric-free rule on the triangle (0,0), (1,0), (0,1)."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    n = degree // 2 + 1
    u, wu = gauss_legendre_01(n)
    s, ws = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (s + 1.0)
    wv = 0.25 * ws  # (1 - v) dv = (1 - s)/2 * ds/2
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    wts = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def triangle_rule(a, b, c, degree: int):
    """Points ``(..., nq, 2)`` and weights ``(..., nq)`` on stacked triangles."""
    ref, w = reference_triangle_rule(degree)
    a, b, c = (np.asarray(z, dtype=float) for z in (a, b, c))
    e1, e2 = b - a, c - a
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    pts = a[..., None, :] + ref[:, :1] * e1[..., None, :] + ref[:, 1:] * e2[..., None, :]
    return pts, det[..., None] * w


def edge_rule(p0, p1, degree: int) -> QuadratureRule:
    """Gauss rule on the segment ``p0 -> p1`` exact to ``degree``."""
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    s, w = gauss_legendre_01(max(degree, 0) // 2 + 1)
    pts = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    return QuadratureRule(pts, w * np.linalg.norm(p1 - p0), degree)


def _fan_apex(geom: CellGeometry) -> np.ndarray:
    """Centroid where it sees every edge, else the kernel Chebyshev center."""
    apex = np.array(geom.centroid, copy=True)
    v = geom.vertices
    w = np.roll(v, -1, axis=-2)
    d1, d2 = v - apex[..., None, :], w - apex[..., None, :]
    ar = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    bad = np.any(ar <= 1e-14 * geom.diameter[..., None] ** 2, axis=-1)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))
        flat_v = v.reshape(-1, *v.shape[-2:])
        flat_a = apex.reshape(-1, 2)
        for (i,) in idx.reshape(-1, 1):
            centre, r = kernel_chebyshev(flat_v[i])
            if r <= 0.0:
                raise ValueError("polygon is not star-shaped; cannot fan-triangulate")
            flat_a[i] = centre
        apex = flat_a.reshape(apex.shape)
    return apex


def polygon_points(geom: CellGeometry, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on stacked polygons: points ``(..., nq, 2)``, weights ``(..., nq)``."""
    v = geom.vertices
    if geom.n_edges == 3:
        return triangle_rule(v[..., 0, :], v[..., 1, :], v[..., 2, :], degree)
    apex = _fan_apex(geom)
    w = np.roll(v, -1, axis=-2)
    a = np.broadcast_to(apex[..., None, :], v.shape)
    pts, wts = triangle_rule(a, v, w, degree)  # (..., m, nq, 2)
    sh = pts.shape
    return pts.reshape(*sh[:-3], sh[-3] * sh[-2], 2), wts.reshape(*sh[:-3], -1)


def polygon_rule(cell, degree: int) -> QuadratureRule:
    """Rule on a single polygon (vertex array or ``CellGeometry``)."""
    geom = cell if isinstance(cell, CellGeometry) else CellGeometry.from_vertices(cell)
    pts, wts = polygon_points(geom, degree)
    return QuadratureRule(pts, wts, degree)


@dataclass(frozen=True)
class MeshQuadrature:
    """Cell quadrature for a whole mesh, grouped like ``mesh.groups``."""

    degree: int
    points: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    def integrate(self, mesh: PolygonalMesh, f) -> np.ndarray:
        """Per-cell integrals of ``f(x, y)``."""
        out = np.empty(mesh.n_cells)
        for g, p, w in zip(mesh.groups, self.points, self.weights):
            out[g.cells] = np.sum(w * f(p[..., 0], p[..., 1]), axis=-1)
        return out


def mesh_quadrature(mesh: PolygonalMesh, degree: int) -> MeshQuadrature:
    pts, wts = [], []
    for g in mesh.groups:
        p, w = polygon_points(g.geometry, degree)
        pts.append(p)
        wts.append(w)
    return MeshQuadrature(degree, tuple(pts), tuple(wts))
