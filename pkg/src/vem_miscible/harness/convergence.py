"""Error norms and refinement studies for the manufactured problem."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..mesh import PolygonalMesh, build_family_mesh
from ..quadrature import mesh_quadrature
from ..system import Discretization, SimulationConfig, SimulationState, time_loop
from ..vemspaces import monomials
from .problems import ManufacturedProblem, example1, validate_sources

log = logging.getLogger(__name__)

CSV_COLUMNS = ("h", "tau", "err_u", "order_u", "err_p", "order_p", "err_c", "order_c")
DEFAULT_TAU0 = {"square": 0.02, "triangle": 0.01, "concave": 0.02, "voronoi-s": 0.02,
                "voronoi-r": 0.02}


@dataclass
class ConvergenceRow:
    h: float
    tau: float
    err_u: float
    order_u: float
    err_p: float
    order_p: float
    err_c: float
    order_c: float
    note: str = ""


def reconstruct(mesh: PolygonalMesh, state: SimulationState, disc: Discretization | None = None):
    """Per-cell constant velocity, cell pressure and affine concentration coefficients."""
    disc = disc or Discretization(mesh)
    u_const = np.empty((mesh.n_cells, 2))
    c_poly = np.empty((mesh.n_cells, 3))
    for g, o, u, c in zip(disc.groups, disc.ops, disc.gather_velocity(state.u_dofs),
                          disc.gather_concentration(state.c_dofs)):
        u_const[g.cells] = o.velocity_constant(u)
        c_poly[g.cells] = o.concentration_poly(c)
    return u_const, state.p_dofs.copy(), c_poly


def compute_errors(
    mesh: PolygonalMesh,
    state: SimulationState,
    problem: ManufacturedProblem,
    t: float | None = None,
    relative: bool = True,
    degree: int = 8,
    disc: Discretization | None = None,
) -> tuple[float, float, float]:
    """L2 errors of the piecewise reconstructions against the exact fields.

    With ``relative=True`` each error is divided by the L2 norm of the exact
    field.
    """
    t = state.t if t is None else t
    u_const, p_cell, c_poly = reconstruct(mesh, state, disc)
    quad = mesh_quadrature(mesh, degree)
    sq = {"u": 0.0, "p": 0.0, "c": 0.0}
    ref = {"u": 0.0, "p": 0.0, "c": 0.0}
    for g, pts, w in zip(mesh.groups, quad.points, quad.weights):
        x, y = pts[..., 0], pts[..., 1]
        ux, uy = problem.exact_u(x, y, t)
        pe = problem.exact_p(x, y, t)
        ce = problem.exact_c(x, y, t)
        ch = np.einsum("cqa,ca->cq", monomials(g.geometry, pts), c_poly[g.cells])
        uc = u_const[g.cells]
        sq["u"] += np.sum(w * ((ux - uc[:, :1]) ** 2 + (uy - uc[:, 1:]) ** 2))
        sq["p"] += np.sum(w * (pe - p_cell[g.cells][:, None]) ** 2)
        sq["c"] += np.sum(w * (ce - ch) ** 2)
        ref["u"] += np.sum(w * (ux**2 + uy**2))
        ref["p"] += np.sum(w * pe**2)
        ref["c"] += np.sum(w * ce**2)
    out = []
    for k in ("u", "p", "c"):
        e = math.sqrt(sq[k])
        if relative:
            e /= math.sqrt(ref[k])
        out.append(e)
    return tuple(out)


def observed_order(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """``log(e_c / e_f) / log(h_c / h_f)``; equals ``log2`` of the ratio when h halves."""
    if h_coarse == 2.0 * h_fine:
        return math.log2(e_coarse / e_fine)
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def steps_for(T: float, tau: float) -> int:
    n = round(T / tau)
    if n < 1 or not math.isclose(n * tau, T, rel_tol=1e-9, abs_tol=1e-14):
        raise ValueError(f"time step {tau} does not reach T={T} in an integer number of steps")
    return n


def solve_manufactured(mesh: PolygonalMesh, tau: float, problem: ManufacturedProblem | None = None,
                       **kw) -> SimulationState:
    problem = problem or example1()
    cfg = SimulationConfig(
        mesh=mesh,
        coeffs=problem.coefficients(),
        tau=tau,
        n_steps=steps_for(problem.T_final, tau),
        c0=lambda x, y: problem.exact_c(x, y, 0.0),
        p0=lambda x, y: problem.exact_p(x, y, 0.0),
        **kw,
    )
    return time_loop(cfg)[-1]


def run_convergence(
    family: str,
    levels: int,
    tau0: float | None = None,
    seed: int = 0,
    problem: ManufacturedProblem | None = None,
    meshes: Sequence[PolygonalMesh] | None = None,
) -> list[ConvergenceRow]:
    """Refinement study: level ``l`` halves both ``h`` and ``tau``."""
    if levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    problem = problem or example1()
    validate_sources(problem)
    tau0 = DEFAULT_TAU0.get(family, 0.02) if tau0 is None else tau0
    rows: list[ConvergenceRow] = []
    for lvl in range(1, levels + 1):
        mesh = meshes[lvl - 1] if meshes is not None else build_family_mesh(family, lvl, seed)
        tau = tau0 / 2 ** (lvl - 1)
        note = ""
        try:
            state = solve_manufactured(mesh, tau, problem)
            eu, ep, ec = compute_errors(mesh, state, problem)
        except Exception as exc:  # annotate the row, keep the table going
            log.error("level %d failed: %s", lvl, exc)
            eu = ep = ec = float("nan")
            note = f"failed: {exc}"
        if rows:
            prev = rows[-1]
            orders = [observed_order(a, b, prev.h, mesh.h)
                      for a, b in ((prev.err_u, eu), (prev.err_p, ep), (prev.err_c, ec))]
        else:
            orders = [float("nan")] * 3
        rows.append(ConvergenceRow(mesh.h, tau, eu, orders[0], ep, orders[1], ec, orders[2], note))
        log.info("%s level %d: h=%.6f tau=%.6f err=(%.6f, %.6f, %.6f)",
                 family, lvl, mesh.h, tau, eu, ep, ec)
    return rows


def rows_to_csv(rows: Sequence[ConvergenceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow(["" if math.isnan(d[k]) else repr(float(d[k])) for k in CSV_COLUMNS])
    return buf.getvalue()


def rows_to_text(rows: Sequence[ConvergenceRow]) -> str:
    head = f"{'h':>9} {'tau':>9} | {'err(u)':>9} {'order':>7} | {'err(p)':>9} {'order':>7} | {'err(c)':>9} {'order':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        def o(v):
            return f"{'-':>7}" if math.isnan(v) else f"{v:7.4f}"
        lines.append(
            f"{r.h:9.6f} {r.tau:9.6f} | {r.err_u:9.6f} {o(r.order_u)} | "
            f"{r.err_p:9.6f} {o(r.order_p)} | {r.err_c:9.6f} {o(r.order_c)}"
            + (f"  # {r.note}" if r.note else "")
        )
    return "\n".join(lines)
