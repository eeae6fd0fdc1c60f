"""Polygonal meshes: data structure, generators, quality checks and text I/O.

Cells are stored as counterclockwise loops of oriented edges. Each edge has a
global orientation (``v0 -> v1``) and a global unit normal obtained by rotating
the tangent clockwise; a cell that traverses the edge in its global direction
has orientation sign ``+1`` and sees the global normal as outward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import Voronoi, cKDTree

Domain = tuple[float, float, float, float]
UNIT_SQUARE: Domain = (0.0, 1.0, 0.0, 1.0)


class MeshError(ValueError):
    """Raised for invalid mesh input or inconsistent topology."""


# ---------------------------------------------------------------------------
# batched polygon geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellGeometry:
    """Geometry of one polygon or a stack of polygons with the same edge count.

    ``vertices`` has shape ``(..., m, 2)`` and lists the polygon
    counterclockwise; local edge ``i`` runs from vertex ``i`` to ``i + 1``.
    """

    vertices: np.ndarray

    @classmethod
    def from_vertices(cls, vertices) -> "CellGeometry":
        v = np.asarray(vertices, dtype=float)
        if v.ndim < 2 or v.shape[-1] != 2 or v.shape[-2] < 3:
            raise MeshError(f"expected (..., m>=3, 2) vertex array, got {v.shape}")
        return cls(v)

    @property
    def n_edges(self) -> int:
        return self.vertices.shape[-2]

    @cached_property
    def tangent(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=-2) - self.vertices

    @cached_property
    def edge_length(self) -> np.ndarray:
        return np.hypot(self.tangent[..., 0], self.tangent[..., 1])

    @cached_property
    def normal(self) -> np.ndarray:
        """Outward unit normals, shape ``(..., m, 2)``."""
        t = self.tangent
        return np.stack([t[..., 1], -t[..., 0]], axis=-1) / self.edge_length[..., None]

    @cached_property
    def midpoint(self) -> np.ndarray:
        return self.vertices + 0.5 * self.tangent

    @cached_property
    def _cross(self) -> np.ndarray:
        v, w = self.vertices, np.roll(self.vertices, -1, axis=-2)
        return v[..., 0] * w[..., 1] - w[..., 0] * v[..., 1]

    @cached_property
    def area(self) -> np.ndarray:
        return 0.5 * self._cross.sum(axis=-1)

    @cached_property
    def centroid(self) -> np.ndarray:
        v, w = self.vertices, np.roll(self.vertices, -1, axis=-2)
        cr = self._cross[..., None]
        return ((v + w) * cr).sum(axis=-2) / (6.0 * self.area[..., None])

    @cached_property
    def diameter(self) -> np.ndarray:
        d = self.vertices[..., :, None, :] - self.vertices[..., None, :, :]
        return np.sqrt((d**2).sum(axis=-1)).max(axis=(-2, -1))

    @cached_property
    def perimeter(self) -> np.ndarray:
        return self.edge_length.sum(axis=-1)

    def is_convex(self, tol: float = 1e-12) -> np.ndarray:
        t = self.tangent
        tn = np.roll(t, -1, axis=-2)
        turn = t[..., 0] * tn[..., 1] - t[..., 1] * tn[..., 0]
        scale = self.edge_length * np.roll(self.edge_length, -1, axis=-1)
        return np.all(turn > -tol * scale, axis=-1)


def polygon_signed_area(points) -> float:
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def kernel_chebyshev(points) -> tuple[np.ndarray, float]:
    """Center and radius of the largest disc inside the kernel of a CCW polygon.

    The kernel is the intersection of the inner half-planes of all edges; a disc
    inside it witnesses star-shapedness with respect to a ball. Returns radius
    ``0`` when the kernel is empty or degenerate.
    """
    g = CellGeometry.from_vertices(points)
    n = g.normal
    rhs = np.einsum("ij,ij->i", n, g.vertices)
    a_ub = np.column_stack([n, np.ones(len(n))])
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=rhs,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if res.status != 0:
        return g.centroid.copy(), 0.0
    return np.asarray(res.x[:2]), float(max(res.x[2], 0.0))


# ---------------------------------------------------------------------------
# mesh data structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellGroup:
    """All cells with ``m`` edges, stacked for vectorized element work."""

    m: int
    cells: np.ndarray  # (nc,)
    edge_ids: np.ndarray  # (nc, m)
    signs: np.ndarray  # (nc, m)
    geometry: CellGeometry


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class PolygonalMesh:
    vertices: np.ndarray
    edges: np.ndarray
    cell_offsets: np.ndarray
    cell_edges: np.ndarray
    cell_signs: np.ndarray
    boundary: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        _freeze(
            self.vertices,
            self.edges,
            self.cell_offsets,
            self.cell_edges,
            self.cell_signs,
            self.boundary,
        )

    # -- construction -----------------------------------------------------

    @classmethod
    def from_polygons(
        cls, vertices, polygons: Sequence[Sequence[int]], name: str = ""
    ) -> "PolygonalMesh":
        """Build a mesh from vertex coordinates and vertex-index polygons.

        Polygons given clockwise are reversed. Edges are numbered in order of
        first appearance and oriented along their first traversal.
        """
        verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
        edge_index: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        uses: list[int] = []
        offsets = [0]
        cell_edges: list[int] = []
        cell_signs: list[int] = []
        for k, poly in enumerate(polygons):
            poly = [int(i) for i in poly]
            if len(poly) < 3 or len(set(poly)) != len(poly):
                raise MeshError(f"cell {k}: degenerate vertex loop {poly}")
            area = polygon_signed_area(verts[poly])
            if area == 0.0:
                raise MeshError(f"cell {k}: zero area")
            if area < 0.0:
                poly = poly[::-1]
            for a, b in zip(poly, poly[1:] + poly[:1]):
                key = (min(a, b), max(a, b))
                e = edge_index.get(key)
                if e is None:
                    e = len(edges)
                    edge_index[key] = e
                    edges.append((a, b))
                    uses.append(1)
                    s = 1
                else:
                    if edges[e] != (b, a) or uses[e] >= 2:
                        raise MeshError(
                            f"cell {k}: edge {key} overlaps or is used more than twice"
                        )
                    uses[e] += 1
                    s = -1
                cell_edges.append(e)
                cell_signs.append(s)
            offsets.append(len(cell_edges))
        return cls(
            vertices=verts.copy(),
            edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
            cell_offsets=np.asarray(offsets, dtype=np.int64),
            cell_edges=np.asarray(cell_edges, dtype=np.int64),
            cell_signs=np.asarray(cell_signs, dtype=np.int64),
            boundary=np.asarray(uses, dtype=np.int64) == 1,
            name=name,
        )

    # -- sizes ------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cell_offsets) - 1

    # -- edge geometry ----------------------------------------------------

    @cached_property
    def edge_tangent(self) -> np.ndarray:
        return self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]

    @cached_property
    def edge_length(self) -> np.ndarray:
        t = self.edge_tangent
        return np.hypot(t[:, 0], t[:, 1])

    @cached_property
    def edge_normal(self) -> np.ndarray:
        t = self.edge_tangent
        return np.column_stack([t[:, 1], -t[:, 0]]) / self.edge_length[:, None]

    @cached_property
    def edge_midpoint(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """``(ne, 2)``: the cell with sign +1 and the cell with sign -1 (or -1)."""
        out = -np.ones((self.n_edges, 2), dtype=np.int64)
        cells = np.repeat(np.arange(self.n_cells), np.diff(self.cell_offsets))
        col = (self.cell_signs < 0).astype(np.int64)
        out[self.cell_edges, col] = cells
        return out

    # -- cell access ------------------------------------------------------

    def cell_edge_ids(self, k: int) -> np.ndarray:
        return self.cell_edges[self.cell_offsets[k] : self.cell_offsets[k + 1]]

    def cell_edge_signs(self, k: int) -> np.ndarray:
        return self.cell_signs[self.cell_offsets[k] : self.cell_offsets[k + 1]]

    def cell_vertex_ids(self, k: int) -> np.ndarray:
        e = self.cell_edge_ids(k)
        s = self.cell_edge_signs(k)
        return np.where(s > 0, self.edges[e, 0], self.edges[e, 1])

    def cell_polygon(self, k: int) -> np.ndarray:
        return self.vertices[self.cell_vertex_ids(k)]

    def cell_geometry(self, k: int) -> CellGeometry:
        return CellGeometry.from_vertices(self.cell_polygon(k))

    @cached_property
    def cell_sizes(self) -> np.ndarray:
        return np.diff(self.cell_offsets)

    @cached_property
    def groups(self) -> tuple[CellGroup, ...]:
        out = []
        starts = np.where(self.cell_signs > 0, self.edges[self.cell_edges, 0],
                          self.edges[self.cell_edges, 1])
        for m in np.unique(self.cell_sizes):
            cells = np.flatnonzero(self.cell_sizes == m)
            idx = self.cell_offsets[cells][:, None] + np.arange(m)[None, :]
            geom = CellGeometry(self.vertices[starts[idx]])
            out.append(
                CellGroup(
                    m=int(m),
                    cells=cells,
                    edge_ids=self.cell_edges[idx],
                    signs=self.cell_signs[idx].astype(float),
                    geometry=geom,
                )
            )
        return tuple(out)

    def _per_cell(self, attr: str, shape=()) -> np.ndarray:
        out = np.empty((self.n_cells, *shape))
        for g in self.groups:
            out[g.cells] = getattr(g.geometry, attr)
        return out

    @cached_property
    def cell_area(self) -> np.ndarray:
        return self._per_cell("area")

    @cached_property
    def cell_centroid(self) -> np.ndarray:
        return self._per_cell("centroid", (2,))

    @cached_property
    def cell_diameter(self) -> np.ndarray:
        return self._per_cell("diameter")

    @property
    def h(self) -> float:
        return float(self.cell_diameter.max())

    @cached_property
    def bounding_box(self) -> Domain:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))

    def convex_cells(self) -> np.ndarray:
        out = np.empty(self.n_cells, dtype=bool)
        for g in self.groups:
            out[g.cells] = g.geometry.is_convex()
        return out

    # -- queries ----------------------------------------------------------

    def validate(self, rtol: float = 1e-12) -> None:
        """Check topological and geometric invariants; raise ``MeshError``."""
        if np.any(self.cell_area <= 0):
            raise MeshError(f"nonpositive area in cells {np.flatnonzero(self.cell_area <= 0)}")
        count = np.bincount(self.cell_edges, minlength=self.n_edges)
        ssum = np.bincount(self.cell_edges, weights=self.cell_signs, minlength=self.n_edges)
        interior = ~self.boundary
        if np.any(count[interior] != 2) or np.any(ssum[interior] != 0):
            raise MeshError("interior edge not shared by two oppositely oriented cells")
        if np.any(count[self.boundary] != 1):
            raise MeshError("boundary edge used by more than one cell")
        for g in self.groups:
            closure = np.einsum("cm,cmd->cd", g.geometry.edge_length, g.geometry.normal)
            bad = np.abs(closure).max(axis=1) > 1e-12 * g.geometry.diameter
            if np.any(bad):
                raise MeshError(f"open polygons: cells {g.cells[bad]}")
        x0, x1, y0, y1 = self.bounding_box
        box = (x1 - x0) * (y1 - y0)
        if abs(self.cell_area.sum() - box) > rtol * box * max(1.0, np.sqrt(self.n_cells)):
            raise MeshError("cell areas do not sum to the domain area")

    @cached_property
    def _padded_polygons(self) -> np.ndarray:
        """``(n_cells, m_max, 2)`` vertex loops, short cells padded with their last vertex."""
        m_max = int(np.max(np.diff(self.cell_offsets)))
        out = np.empty((self.n_cells, m_max, 2))
        for k in range(self.n_cells):
            v = self.cell_polygon(k)
            out[k, : len(v)] = v
            out[k, len(v):] = v[-1]
        return out

    def locate(self, points, tol: float = 1e-10) -> np.ndarray:
        """Index of the lowest-numbered cell containing each point, or -1.

        Points on a shared edge or vertex belong to every incident cell; the
        lowest id wins so the answer is deterministic.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = -np.ones(len(pts), dtype=np.int64)
        if not len(pts):
            return out
        scale = tol * max(self.h, 1e-300)
        x0, x1, y0, y1 = self.bounding_box
        inbox = ((pts[:, 0] >= x0 - scale) & (pts[:, 0] <= x1 + scale)
                 & (pts[:, 1] >= y0 - scale) & (pts[:, 1] <= y1 + scale))
        idx = np.flatnonzero(inbox)
        if not idx.size:
            return out
        k = min(self.n_cells, 12)
        _, cand = cKDTree(self.cell_centroid).query(pts[idx], k=k)
        cand = np.sort(np.asarray(cand).reshape(len(idx), -1), axis=1)
        hit = _contains(self._padded_polygons[cand], pts[idx], scale)
        found = hit.any(axis=1)
        out[idx[found]] = cand[found, np.argmax(hit[found], axis=1)]
        # exhaustive search for points whose neighbourhood missed (badly shaped cells)
        for i in idx[~found]:
            h = np.flatnonzero(_contains(self._padded_polygons[None], pts[i][None], scale)[0])
            if h.size:
                out[i] = h[0]
        return out


def _contains(polys: np.ndarray, pts: np.ndarray, tol: float) -> np.ndarray:
    """Closed point-in-polygon test; ``polys (n, c, m, 2)``, ``pts (n, 2)`` -> ``(n, c)``."""
    v = polys
    w = np.roll(polys, -1, axis=-2)
    p = pts[:, None, None, :]
    t = w - v
    d = p - v
    len2 = np.einsum("...d,...d->...", t, t)
    s = np.clip(np.einsum("...d,...d->...", d, t) / np.where(len2 > 0, len2, 1.0), 0.0, 1.0)
    dist = np.linalg.norm(d - s[..., None] * t, axis=-1)
    on_edge = np.any(dist <= tol, axis=-1)
    y = p[..., 1]
    up = (v[..., 1] <= y) & (w[..., 1] > y)
    down = (v[..., 1] > y) & (w[..., 1] <= y)
    side = t[..., 0] * d[..., 1] - d[..., 0] * t[..., 1]
    wn = np.sum(up & (side > 0), axis=-1) - np.sum(down & (side < 0), axis=-1)
    return on_edge | (wn != 0)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise MeshError(f"number of subdivisions must be a positive integer, got {n}")
    return int(n)


def _grid(n: int, domain: Domain):
    x0, x1, y0, y1 = domain
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # [row j, col i]
    return verts, vid


def build_square_mesh(n: int, domain: Domain = UNIT_SQUARE) -> PolygonalMesh:
    n = _check_n(n)
    verts, vid = _grid(n, domain)
    polys = [
        [vid[j, i], vid[j, i + 1], vid[j + 1, i + 1], vid[j + 1, i]]
        for j in range(n)
        for i in range(n)
    ]
    return PolygonalMesh.from_polygons(verts, polys, name=f"square{n}")


def build_triangular_mesh(n: int, domain: Domain = UNIT_SQUARE) -> PolygonalMesh:
    """Structured right triangles; every square is cut along its (+,+) diagonal,
    so the mesh is symmetric under reflection about that diagonal."""
    n = _check_n(n)
    verts, vid = _grid(n, domain)
    polys = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid[j, i], vid[j, i + 1], vid[j + 1, i + 1], vid[j + 1, i]
            polys.append([a, b, c])
            polys.append([a, c, d])
    return PolygonalMesh.from_polygons(verts, polys, name=f"triangle{n}")


def build_concave_mesh(
    n: int, domain: Domain = UNIT_SQUARE, amplitude: float = 0.15
) -> PolygonalMesh:
    """Each grid square is cut by a zigzag into two non-convex hexagons.

    The cut runs from the left-side midpoint through ``(1/3, 1/2 + a)`` and
    ``(2/3, 1/2 - a)`` (local unit coordinates) to the right-side midpoint,
    which puts one reflex vertex in each half.
    """
    n = _check_n(n)
    if not 0.0 < amplitude < 0.5:
        raise MeshError("amplitude must lie in (0, 1/2)")
    x0, x1, y0, y1 = domain
    hx, hy = (x1 - x0) / n, (y1 - y0) / n
    corner = {}
    verts: list[tuple[float, float]] = []

    def vertex(key, xy):
        if key not in corner:
            corner[key] = len(verts)
            verts.append(xy)
        return corner[key]

    polys = []
    for j in range(n):
        for i in range(n):
            X = lambda s: x0 + (i + s) * hx  # noqa: E731
            Y = lambda s: y0 + (j + s) * hy  # noqa: E731
            bl = vertex(("c", i, j), (X(0), Y(0)))
            br = vertex(("c", i + 1, j), (X(1), Y(0)))
            tr = vertex(("c", i + 1, j + 1), (X(1), Y(1)))
            tl = vertex(("c", i, j + 1), (X(0), Y(1)))
            ml = vertex(("m", i, j), (X(0), Y(0.5)))
            mr = vertex(("m", i + 1, j), (X(1), Y(0.5)))
            p = vertex(("p", i, j), (X(1 / 3), Y(0.5 + amplitude)))
            q = vertex(("q", i, j), (X(2 / 3), Y(0.5 - amplitude)))
            polys.append([bl, br, mr, q, p, ml])
            polys.append([ml, p, q, mr, tr, tl])
    return PolygonalMesh.from_polygons(np.asarray(verts), polys, name=f"concave{n}")


def _clipped_voronoi(seeds: np.ndarray, domain: Domain, tol: float):
    """Voronoi cells of ``seeds`` clipped to the rectangle via mirror seeds."""
    x0, x1, y0, y1 = domain
    s = seeds
    mirrors = [
        np.column_stack([2 * x0 - s[:, 0], s[:, 1]]),
        np.column_stack([2 * x1 - s[:, 0], s[:, 1]]),
        np.column_stack([s[:, 0], 2 * y0 - s[:, 1]]),
        np.column_stack([s[:, 0], 2 * y1 - s[:, 1]]),
    ]
    vor = Voronoi(np.vstack([s, *mirrors]))
    polys = []
    for i in range(len(s)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshError("unbounded Voronoi region for an interior seed")
        polys.append(vor.vertices[region])
    return polys


def _assemble_polygons(polys, domain: Domain, tol: float):
    """Merge near-coincident vertices, snap to the box, drop collapsed edges."""
    x0, x1, y0, y1 = domain
    pts = np.vstack(polys)
    pts[:, 0] = np.where(np.abs(pts[:, 0] - x0) < tol, x0, pts[:, 0])
    pts[:, 0] = np.where(np.abs(pts[:, 0] - x1) < tol, x1, pts[:, 0])
    pts[:, 1] = np.where(np.abs(pts[:, 1] - y0) < tol, y0, pts[:, 1])
    pts[:, 1] = np.where(np.abs(pts[:, 1] - y1) < tol, y1, pts[:, 1])
    tree = cKDTree(pts)
    rep = np.arange(len(pts))
    for a, b in sorted(tree.query_pairs(tol)):
        ra, rb = rep[a], rep[b]
        while rep[ra] != ra:
            ra = rep[ra]
        while rep[rb] != rb:
            rb = rep[rb]
        if ra != rb:
            rep[max(ra, rb)] = min(ra, rb)
    for i in range(len(rep)):
        r = rep[i]
        while rep[r] != r:
            r = rep[r]
        rep[i] = r
    uniq, inv = np.unique(rep, return_inverse=True)
    verts = pts[uniq]
    out, start = [], 0
    for p in polys:
        ids = list(inv[start : start + len(p)])
        start += len(p)
        loop = [v for k, v in enumerate(ids) if v != ids[k - 1]]
        out.append(loop)
    return verts, out


def _insert_hanging(verts: np.ndarray, polys, tol: float):
    """Split polygon edges that pass through vertices of other polygons."""
    tree = cKDTree(verts)
    fixed = []
    for loop in polys:
        new = []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            new.append(a)
            pa, pb = verts[a], verts[b]
            L = np.linalg.norm(pb - pa)
            cand = tree.query_ball_point(0.5 * (pa + pb), 0.5 * L + tol)
            inner = []
            for c in cand:
                if c in (a, b):
                    continue
                t = np.dot(verts[c] - pa, pb - pa) / L**2
                dist = np.linalg.norm(pa + t * (pb - pa) - verts[c])
                if 0.0 < t < 1.0 and dist < tol:
                    inner.append((t, c))
            new.extend(c for _, c in sorted(inner))
        fixed.append(new)
    return fixed


def _voronoi_mesh(seeds, domain, tol, name):
    polys = _clipped_voronoi(seeds, domain, tol)
    verts, loops = _assemble_polygons(polys, domain, tol)
    loops = _insert_hanging(verts, loops, tol)
    mesh = PolygonalMesh.from_polygons(verts, loops, name=name)
    mesh.validate(rtol=1e-10)
    return mesh


def build_voronoi_mesh(
    n_seeds: int,
    mode: str = "random",
    lloyd_iters: int | None = None,
    rng_seed: int = 0,
    domain: Domain = UNIT_SQUARE,
    jitter: float = 0.15,
) -> PolygonalMesh:
    """Clipped Voronoi tessellation of a rectangle.

    ``structured`` mode places seeds on a square lattice (``n_seeds`` must be a
    perfect square) and perturbs each by at most ``jitter`` lattice spacings;
    ``random`` mode draws uniform seeds. Lloyd relaxation (default 0 iterations
    for structured, 3 for random) moves seeds to cell centroids.
    """
    if int(n_seeds) != n_seeds or n_seeds < 1:
        raise MeshError(f"n_seeds must be a positive integer, got {n_seeds}")
    n_seeds = int(n_seeds)
    if lloyd_iters is None:
        lloyd_iters = 3 if mode == "random" else 0
    if lloyd_iters < 0:
        raise MeshError("lloyd_iters must be >= 0")
    x0, x1, y0, y1 = domain
    scale = max(x1 - x0, y1 - y0)
    tol = 1e-9 * scale
    rng = np.random.default_rng(rng_seed)
    if mode == "structured":
        m = int(round(np.sqrt(n_seeds)))
        if m * m != n_seeds:
            raise MeshError("structured Voronoi needs a perfect-square seed count")
        hx, hy = (x1 - x0) / m, (y1 - y0) / m
        I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
        seeds = np.column_stack(
            [x0 + (I.ravel() + 0.5) * hx, y0 + (J.ravel() + 0.5) * hy]
        )
        seeds += jitter * rng.uniform(-1.0, 1.0, seeds.shape) * [hx, hy]
    elif mode == "random":
        seeds = np.column_stack(
            [rng.uniform(x0, x1, n_seeds), rng.uniform(y0, y1, n_seeds)]
        )
    else:
        raise MeshError(f"unknown Voronoi mode {mode!r}")
    name = f"voronoi-{mode[0]}{n_seeds}"
    for _ in range(lloyd_iters):
        _check_seeds(seeds, tol)
        polys = _clipped_voronoi(seeds, domain, tol)
        seeds = np.array([CellGeometry(p[::-1] if polygon_signed_area(p) < 0 else p).centroid
                          for p in polys])
    _check_seeds(seeds, tol)
    return _voronoi_mesh(seeds, domain, tol, name)


def _check_seeds(seeds, tol):
    if len(seeds) > 1:
        d, _ = cKDTree(seeds).query(seeds, k=2)
        if np.any(d[:, 1] <= tol):
            raise MeshError("coincident Voronoi seeds")


FAMILIES = ("square", "triangle", "concave", "voronoi-s", "voronoi-r")


def build_family_mesh(family: str, level: int, seed: int = 0,
                      domain: Domain = UNIT_SQUARE) -> PolygonalMesh:
    """Mesh ``level`` (1-based) of a refinement family."""
    if level < 1:
        raise MeshError("level must be >= 1")
    return build_mesh(family, family_size(family, level), seed, domain)


def family_size(family: str, level: int) -> int:
    """Subdivisions (or Voronoi seeds) of refinement ``level``."""
    if family == "square":
        return 4 * 2 ** (level - 1)
    if family in ("triangle", "concave"):
        return 2**level
    if family in ("voronoi-s", "voronoi-r"):
        return 4**level
    raise MeshError(f"unknown mesh family {family!r}")


def build_mesh(family: str, n: int, seed: int = 0, domain: Domain = UNIT_SQUARE) -> PolygonalMesh:
    """Family mesh with ``n`` subdivisions per side (``n`` seeds for Voronoi)."""
    if family == "square":
        return build_square_mesh(n, domain)
    if family == "triangle":
        return build_triangular_mesh(n, domain)
    if family == "concave":
        return build_concave_mesh(n, domain)
    if family == "voronoi-s":
        return build_voronoi_mesh(n, mode="structured", rng_seed=seed, domain=domain)
    if family == "voronoi-r":
        return build_voronoi_mesh(n, mode="random", rng_seed=seed, domain=domain)
    raise MeshError(f"unknown mesh family {family!r}")


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------


@dataclass
class MeshQualityReport:
    rho_star: float
    min_edge_ratio: float
    uniformity: float
    violations: list[tuple[int, str]]
    cell_rho: np.ndarray
    cell_edge_ratio: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.violations


def cell_kernel_radius(mesh: PolygonalMesh) -> np.ndarray:
    """Radius of the largest ball inside the kernel of each cell."""
    r = np.empty(mesh.n_cells)
    for g in mesh.groups:
        if g.m == 3:
            r[g.cells] = 2.0 * g.geometry.area / g.geometry.perimeter
            continue
        for c, poly in zip(g.cells, g.geometry.vertices):
            r[c] = kernel_chebyshev(poly)[1]
    return r


def check_quality(
    mesh: PolygonalMesh, rho0: float = 0.1, rho1: float | None = None
) -> MeshQualityReport:
    """Report star-shapedness, edge-length and uniformity ratios per cell."""
    rho1 = rho0 if rho1 is None else rho1
    hk = mesh.cell_diameter
    rho = cell_kernel_radius(mesh) / hk
    ratio = np.empty(mesh.n_cells)
    for g in mesh.groups:
        ratio[g.cells] = g.geometry.edge_length.min(axis=1) / g.geometry.diameter
    unif = hk / mesh.h
    violations: list[tuple[int, str]] = []
    for k in range(mesh.n_cells):
        if rho[k] <= 0.0:
            violations.append((k, "not star-shaped"))
        elif rho[k] < rho0:
            violations.append((k, "D1: kernel ball too small"))
        if ratio[k] < rho0:
            violations.append((k, "D2: short edge"))
        if unif[k] < rho1:
            violations.append((k, "D3: cell much smaller than h"))
    return MeshQualityReport(
        rho_star=float(rho.min()),
        min_edge_ratio=float(ratio.min()),
        uniformity=float(unif.min()),
        violations=violations,
        cell_rho=rho,
        cell_edge_ratio=ratio,
    )


# ---------------------------------------------------------------------------
# text interchange
# ---------------------------------------------------------------------------

HEADER = "vem-mesh v1"


def write_mesh(mesh: PolygonalMesh, path) -> None:
    lines = [HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"edges {mesh.n_edges}")
    lines += [
        f"{a} {b} {int(f)}" for (a, b), f in zip(mesh.edges.tolist(), mesh.boundary.tolist())
    ]
    lines.append(f"cells {mesh.n_cells}")
    for k in range(mesh.n_cells):
        e, s = mesh.cell_edge_ids(k), mesh.cell_edge_signs(k)
        body = " ".join(f"{a} {b}" for a, b in zip(e.tolist(), s.tolist()))
        lines.append(f"{len(e)} {body}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> PolygonalMesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise MeshError(f"{path}: missing '{HEADER}' header")
    pos = 1

    def section(name):
        nonlocal pos
        tag, count = lines[pos].split()
        if tag != name:
            raise MeshError(f"{path}: expected section {name!r}, found {tag!r}")
        pos += 1
        body = lines[pos : pos + int(count)]
        if len(body) != int(count):
            raise MeshError(f"{path}: truncated {name} section")
        pos += int(count)
        return body

    verts = np.array([[float(t) for t in ln.split()] for ln in section("vertices")]).reshape(-1, 2)
    erows = np.array([[int(t) for t in ln.split()] for ln in section("edges")], dtype=np.int64)
    erows = erows.reshape(-1, 3)
    offsets, ce, cs = [0], [], []
    for ln in section("cells"):
        toks = [int(t) for t in ln.split()]
        k = toks[0]
        if len(toks) != 1 + 2 * k:
            raise MeshError(f"{path}: malformed cell line {ln!r}")
        ce += toks[1::2]
        cs += toks[2::2]
        offsets.append(len(ce))
    mesh = PolygonalMesh(
        vertices=verts,
        edges=erows[:, :2].copy(),
        cell_offsets=np.asarray(offsets, dtype=np.int64),
        cell_edges=np.asarray(ce, dtype=np.int64),
        cell_signs=np.asarray(cs, dtype=np.int64),
        boundary=erows[:, 2].astype(bool),
        name=str(path),
    )
    mesh.validate()
    return mesh
