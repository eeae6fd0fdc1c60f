"""Global assembly and the decoupled backward Euler time loop.

Each step first solves the velocity/pressure saddle-point system with the
coefficients frozen at the previous concentration, then the linear transport
system with the fresh velocity and pressure increment.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import forms
from .forms import CoefficientSet
from .linalg import LinearSolveError, SolveOptions, SparsityPattern, condition_estimate, solve
from .mesh import PolygonalMesh
from .vemspaces import (
    ElementOperators,
    SpaceLayout,
    build_layout,
    cell_means,
    edge_means,
    mesh_operators,
    normal_flux_means,
)

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# wells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Well:
    location: tuple[float, float]
    rate: float
    c_hat: float = 1.0


@dataclass(frozen=True)
class WellSet:
    """Point wells regularized as uniform densities on their host cells."""

    wells: tuple[Well, ...]
    cells: np.ndarray
    q_cell: np.ndarray  # per-cell density rate / |K|
    chat_cell: np.ndarray  # injected concentration per cell

    def total_rate(self) -> float:
        return float(sum(w.rate for w in self.wells))


def place_wells(mesh: PolygonalMesh, wells: Sequence[Well | tuple]) -> WellSet:
    """Attach each well to the lowest-numbered cell containing its location."""
    ws = tuple(w if isinstance(w, Well) else Well(tuple(w[0]), float(w[1]), float(w[2]))
               for w in wells)
    q = np.zeros(mesh.n_cells)
    chat = np.zeros(mesh.n_cells)
    hosts = []
    if ws:
        loc = mesh.locate([w.location for w in ws])
        for w, k in zip(ws, loc):
            if k < 0:
                raise ValueError(f"well location {w.location} lies outside the domain")
            q[k] += w.rate / mesh.cell_area[k]
            if w.rate > 0:
                chat[k] = w.c_hat
            hosts.append(int(k))
    return WellSet(ws, np.asarray(hosts, dtype=np.int64), q, chat)


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


@dataclass
class SimulationState:
    u_dofs: np.ndarray
    p_dofs: np.ndarray
    c_dofs: np.ndarray
    t: float = 0.0
    step_index: int = 0


@dataclass
class SparseSystem:
    """Reduced linear system; ``free`` maps reduced unknowns to full indices."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: list[tuple[int, float]]
    free: np.ndarray
    n_full: int

    def expand(self, x: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_full)
        for dof, val in self.constrained:
            full[dof] = val
        full[self.free] = x
        return full


class Discretization:
    """Mesh-dependent data reused across time steps."""

    def __init__(self, mesh: PolygonalMesh, quad_degree: int = 6, k: int = 0):
        self.mesh = mesh
        self.layout: SpaceLayout = build_layout(mesh, k)
        self.ops: tuple[ElementOperators, ...] = mesh_operators(mesh, k, quad_degree)
        self.groups = mesh.groups
        ne, nc = mesh.n_edges, mesh.n_cells
        self._flow_map = -np.ones(ne + nc, dtype=np.int64)
        free_v = self.layout.free_velocity
        self._flow_map[free_v] = np.arange(len(free_v))
        self._flow_map[ne:] = len(free_v) + np.arange(nc)
        self.n_flow = len(free_v) + nc
        rows, cols = self._flow_triplet_index()
        self._flow_keep = (rows >= 0) & (cols >= 0)
        self.flow_pattern = SparsityPattern(rows[self._flow_keep], cols[self._flow_keep],
                                            (self.n_flow, self.n_flow))
        r, c = self._square_index()
        self.transport_pattern = SparsityPattern(r, c, (ne, ne))
        self._mass_cache: dict[int, sp.csr_matrix] = {}

    # index bookkeeping ------------------------------------------------------

    def _square_index(self):
        rows, cols = [], []
        for g in self.groups:
            e = g.edge_ids
            rows.append(np.broadcast_to(e[:, :, None], (*e.shape, g.m)).ravel())
            cols.append(np.broadcast_to(e[:, None, :], (*e.shape, g.m)).ravel())
        return np.concatenate(rows), np.concatenate(cols)

    def _flow_triplet_index(self):
        ne = self.mesh.n_edges
        fm = self._flow_map
        rows, cols = [], []
        for g in self.groups:
            e = g.edge_ids
            p = ne + g.cells
            ee_r = np.broadcast_to(e[:, :, None], (*e.shape, g.m)).ravel()
            ee_c = np.broadcast_to(e[:, None, :], (*e.shape, g.m)).ravel()
            pe = np.broadcast_to(p[:, None], e.shape).ravel()
            rows += [ee_r, e.ravel(), pe, p]
            cols += [ee_c, pe, e.ravel(), p]
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        return fm[rows], fm[cols]

    # local gathers -------------------------------------------------------------

    def gather_velocity(self, u: np.ndarray):
        """Outward-oriented local flux DOFs per group."""
        return [g.signs * u[g.edge_ids] for g in self.groups]

    def gather_concentration(self, c: np.ndarray):
        return [c[g.edge_ids] for g in self.groups]

    def scatter_square(self, blocks) -> np.ndarray:
        return np.concatenate([b.ravel() for b in blocks])

    def assemble_vector(self, blocks, signed: bool = False) -> np.ndarray:
        out = np.zeros(self.mesh.n_edges)
        for g, b in zip(self.groups, blocks):
            vals = g.signs * b if signed else b
            out += np.bincount(g.edge_ids.ravel(), weights=vals.ravel(), minlength=len(out))
        return out

    def mass_matrix(self, coeffs: CoefficientSet) -> sp.csr_matrix:
        key = id(coeffs)
        if key not in self._mass_cache:
            blocks = [forms.local_Mh(o, coeffs) for o in self.ops]
            self._mass_cache = {key: self.transport_pattern.assemble(self.scatter_square(blocks))}
        return self._mass_cache[key]

    def source_terms(self, coeffs: CoefficientSet, t: float):
        """Per-group ``(pressure_rhs, reaction, transport_rhs)`` at time ``t``."""
        out = []
        q = coeffs.q
        for g, o in zip(self.groups, self.ops):
            if isinstance(q, WellSet):
                dens = q.q_cell[g.cells]
                inj = np.maximum(dens, 0.0)
                pressure = dens * o.area
                unit = np.ones_like(o.quad_weights)
                react = inj[:, None, None] * forms.local_reaction(o, unit)
                load = (inj * q.chat_cell[g.cells])[:, None] * forms.local_load(o, unit)
                if coeffs.f is not None:
                    x, y = o.quad_points[..., 0], o.quad_points[..., 1]
                    react = np.zeros_like(react)
                    load = forms.local_load(o, coeffs.f(x, y, t) * unit)
                out.append((pressure, react, load))
            else:
                out.append(forms.local_source_q(o, t, coeffs))
        return out


def discretize(mesh: PolygonalMesh, quad_degree: int = 6) -> Discretization:
    return Discretization(mesh, quad_degree)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble_flow(
    disc: Discretization,
    coeffs: CoefficientSet,
    state_prev: SimulationState,
    tau: float,
    t_n: float,
    sources=None,
) -> SparseSystem:
    """Symmetric-indefinite velocity/pressure system at ``t_n``.

    Unknown order: free (interior) edge fluxes, then cell pressures. Rows are
    ``[A_h  B^T; B  -W_h/tau]`` with right-hand side
    ``(gamma load, -(q, 1_K) - W_h p_prev / tau)``.
    """
    if tau <= 0:
        raise ValueError("time step must be positive")
    mesh = disc.mesh
    ne, nc = mesh.n_edges, mesh.n_cells
    c_loc = disc.gather_concentration(state_prev.c_dofs)
    sources = sources if sources is not None else disc.source_terms(coeffs, t_n)
    vals = []
    W = np.empty(nc)
    rhs_full = np.zeros(ne + nc)
    for g, o, c, src in zip(disc.groups, disc.ops, c_loc, sources):
        A = forms.local_Ah(o, coeffs, c)
        s = g.signs
        A = s[:, :, None] * A * s[:, None, :]
        Bs = s * forms.local_B(o)
        w = forms.local_Wh(o, coeffs, c)
        W[g.cells] = w
        vals += [A.ravel(), Bs.ravel(), Bs.ravel(), -w / tau]
        gam = forms.local_gamma_rhs(o, coeffs, c)
        if coeffs.gamma is not None:
            rhs_full[:ne] += np.bincount(g.edge_ids.ravel(), weights=(s * gam).ravel(), minlength=ne)
        rhs_full[ne + g.cells] = -(src[0] + w * state_prev.p_dofs[g.cells] / tau)
    if np.any(W <= 0):
        bad = np.flatnonzero(W <= 0)
        raise SimulationError(f"singular flow system: nonpositive W_h on cells {bad[:10]}")
    values = np.concatenate(vals)[disc._flow_keep]
    matrix = disc.flow_pattern.assemble(values)
    free = np.concatenate([disc.layout.free_velocity, ne + np.arange(nc)])
    constrained = [(int(e), 0.0) for e in np.flatnonzero(disc.layout.velocity_boundary)]
    return SparseSystem(matrix, rhs_full[free], constrained, free, ne + nc)


def assemble_transport(
    disc: Discretization,
    coeffs: CoefficientSet,
    u_n: np.ndarray,
    p_n: np.ndarray,
    p_prev: np.ndarray,
    c_prev: np.ndarray,
    tau: float,
    t_n: float,
    c_kh: Optional[np.ndarray] = None,
    sources=None,
) -> SparseSystem:
    """Linear concentration system ``(M/tau + T + D + R) c = F + M c_prev/tau - K dp/tau``.

    The compressibility coupling ``K_h`` evaluates ``b`` at ``c_kh`` (default:
    the previous level), which keeps the system linear in the unknown.
    """
    ne = disc.mesh.n_edges
    c_kh = c_prev if c_kh is None else c_kh
    u_loc = disc.gather_velocity(u_n)
    ck_loc = disc.gather_concentration(c_kh)
    sources = sources if sources is not None else disc.source_terms(coeffs, t_n)
    dp = (p_n - p_prev) / tau
    blocks = []
    rhs_blocks = []
    for g, o, u, ck, src in zip(disc.groups, disc.ops, u_loc, ck_loc, sources):
        blocks.append(forms.local_Th(o, u) + forms.local_Dh(o, coeffs, u) + src[1])
        kh = forms.local_Kh(o, coeffs, ck)
        rhs_blocks.append(src[2] - dp[g.cells][:, None] * kh)
    M = disc.mass_matrix(coeffs)
    matrix = (M / tau + disc.transport_pattern.assemble(disc.scatter_square(blocks))).tocsr()
    matrix.sort_indices()
    rhs = disc.assemble_vector(rhs_blocks) + M @ c_prev / tau
    return SparseSystem(matrix, rhs, [], np.arange(ne), ne)


# ---------------------------------------------------------------------------
# initial data and time loop
# ---------------------------------------------------------------------------


def set_initial(
    disc: Discretization,
    c0: Callable | float | None = None,
    p0: Callable | float | None = None,
    u0: Callable | None = None,
) -> SimulationState:
    """DOF interpolation of the initial data (edge means, cell means, fluxes)."""
    mesh = disc.mesh

    # constants are filled directly so they stay exact
    c = edge_means(mesh, c0) if callable(c0) else np.full(mesh.n_edges, float(c0 or 0.0))
    p = cell_means(mesh, p0) if callable(p0) else np.full(mesh.n_cells, float(p0 or 0.0))
    u = np.zeros(mesh.n_edges)
    if u0 is not None:
        u = normal_flux_means(mesh, u0)
        u[disc.layout.velocity_boundary] = 0.0
    return SimulationState(u, p, c, 0.0, 0)


@dataclass
class SimulationConfig:
    mesh: PolygonalMesh
    coeffs: CoefficientSet
    tau: float
    n_steps: int
    c0: Callable | float | None = None
    p0: Callable | float | None = None
    u0: Callable | None = None
    stride: int = 0  # 0: keep only initial and final states
    save_steps: Sequence[int] = ()
    kh_iterations: int = 0
    solver: SolveOptions = field(default_factory=SolveOptions)
    quad_degree: int = 6
    t0: float = 0.0


def step(disc, coeffs, state: SimulationState, tau: float, solver: SolveOptions,
         kh_iterations: int = 0) -> SimulationState:
    t_n = state.t + tau
    n = state.step_index + 1
    sources = disc.source_terms(coeffs, t_n)
    flow = assemble_flow(disc, coeffs, state, tau, t_n, sources)
    ne = disc.mesh.n_edges
    # solve for the pressure increment; a large ambient pressure would
    # otherwise put the residual at the rounding floor of A @ x
    x0 = np.concatenate([np.zeros(len(flow.free) - disc.mesh.n_cells), state.p_dofs])
    shifted = replace(flow, rhs=flow.rhs - flow.matrix @ x0)
    x = x0 + _solve(shifted, solver, n, "flow")
    full = flow.expand(x)
    u, p = full[:ne], full[ne:]
    trans = assemble_transport(disc, coeffs, u, p, state.p_dofs, state.c_dofs, tau, t_n,
                               sources=sources)
    c = _solve(trans, solver, n, "transport")
    for _ in range(kh_iterations):
        trans = assemble_transport(disc, coeffs, u, p, state.p_dofs, state.c_dofs, tau, t_n,
                                   c_kh=c, sources=sources)
        c_new = _solve(trans, solver, n, "transport")
        done = np.linalg.norm(c_new - c) <= 1e-12 * max(1.0, np.linalg.norm(c_new))
        c = c_new
        if done:
            break
    return SimulationState(u, p, c, t_n, n)


def _solve(system: SparseSystem, solver: SolveOptions, n: int, what: str) -> np.ndarray:
    try:
        return solve(system.matrix, system.rhs, solver)
    except LinearSolveError as exc:
        cond = condition_estimate(system.matrix)
        raise SimulationError(
            f"{what} solve failed at step {n}: {exc} (condition estimate {cond:.2e})"
        ) from exc


def time_loop(config: SimulationConfig, disc: Discretization | None = None,
              callback: Callable[[SimulationState], None] | None = None) -> list[SimulationState]:
    """Advance ``n_steps`` decoupled steps; returns the stored states."""
    if config.n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    disc = disc or Discretization(config.mesh, config.quad_degree)
    state = set_initial(disc, config.c0, config.p0, config.u0)
    state = replace(state, t=config.t0)
    states = [state]
    keep = set(config.save_steps)
    for n in range(1, config.n_steps + 1):
        state = step(disc, config.coeffs, state, config.tau, config.solver, config.kh_iterations)
        if callback is not None:
            callback(state)
        if n == config.n_steps or n in keep or (config.stride and n % config.stride == 0):
            states.append(state)
    return states
