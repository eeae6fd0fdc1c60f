"""Quarter five-spot well tests on (0, 1000)^2 with an injector/producer pair."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..forms import CoefficientSet, compressibility_laws
from ..mesh import PolygonalMesh, build_square_mesh, build_triangular_mesh
from ..system import (
    Discretization,
    SimulationConfig,
    SimulationState,
    Well,
    place_wells,
    time_loop,
)
from .convergence import reconstruct

log = logging.getLogger(__name__)

DOMAIN = (0.0, 1000.0, 0.0, 1000.0)
INJECTOR = (1000.0, 1000.0)
PRODUCER = (0.0, 0.0)
RATE = 30.0
POROSITY = 0.1
C_PHI = 1e-6
P_INIT = 3000.0
CHECKPOINTS = (1080.0, 3600.0)
LOWER_INTERFACE = 500.0  # Omega_L below, Omega_U above


@dataclass(frozen=True)
class WellTestPreset:
    test_id: int
    mobility_ratio: float
    layered: bool
    d_m: float = 1.0

    def permeability(self, x, y):
        y = np.asarray(y, dtype=float)
        if not self.layered:
            return np.full(np.broadcast(x, y).shape, 1000.0)
        return np.where(y < LOWER_INTERFACE, 1000.0, 400.0)

    def coefficients(self, wells) -> CoefficientSet:
        m4 = self.mobility_ratio ** 0.25 - 1.0

        def inverse_mobility(c, x, y):
            c = np.asarray(c, dtype=float)
            return 1.0 / (self.permeability(x, y) * (1.0 + m4 * c) ** 4)

        d, b = compressibility_laws(C_PHI, C_PHI, POROSITY)
        return CoefficientSet(
            A=inverse_mobility,
            d=lambda c, x=None, y=None: d(c),
            b=lambda c, x=None, y=None: b(c),
            phi=POROSITY, d_m=self.d_m, d_l=0.0, d_t=0.0, q=wells,
        )


PRESETS = {
    1: WellTestPreset(1, 1.0, False),
    2: WellTestPreset(2, 41.0, False),
    3: WellTestPreset(3, 1.0, True),
    4: WellTestPreset(4, 41.0, True),
}

MESHES = {
    "square32": lambda: build_square_mesh(32, DOMAIN),
    "triangle512": lambda: build_triangular_mesh(16, DOMAIN),
}


@dataclass
class WellTestResult:
    test_id: int
    mesh: PolygonalMesh
    disc: Discretization
    snapshots: dict[float, SimulationState]
    metrics: dict[str, float] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)


def evaluate_concentration(mesh: PolygonalMesh, disc: Discretization, state: SimulationState,
                           points) -> np.ndarray:
    """Affine reconstruction of ``c_h`` at arbitrary points (nan outside the mesh)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cells = mesh.locate(pts)
    _, _, poly = reconstruct(mesh, state, disc)
    out = np.full(len(pts), np.nan)
    ok = cells >= 0
    k = cells[ok]
    rel = (pts[ok] - mesh.cell_centroid[k]) / mesh.cell_diameter[k][:, None]
    out[ok] = poly[k, 0] + poly[k, 1] * rel[:, 0] + poly[k, 2] * rel[:, 1]
    return out


def diagonal_permutation(mesh: PolygonalMesh, tol: float = 1e-8) -> np.ndarray:
    """Edge map under the reflection ``(x, y) -> (y, x)``; raises if the mesh is not symmetric."""
    mid = mesh.edge_midpoint
    dist, idx = cKDTree(mid).query(mid[:, ::-1])
    scale = max(np.ptp(mid[:, 0]), np.ptp(mid[:, 1]), 1.0)
    if np.any(dist > tol * scale):
        raise ValueError("mesh is not symmetric about the diagonal")
    return idx


def symmetry_metric(mesh: PolygonalMesh, c_dofs: np.ndarray) -> float:
    """``max |c(x, y) - c(y, x)|`` over paired edge DOFs."""
    perm = diagonal_permutation(mesh)
    return float(np.max(np.abs(c_dofs - c_dofs[perm])))


def front_radii(mesh, disc, state, center=INJECTOR, level: float = 0.5, n_rays: int = 17,
                margin_deg: float = 5.0, n_samples: int = 400) -> np.ndarray:
    """Distance from ``center`` to the first ``c = level`` crossing along rays into the domain."""
    lo, hi = np.deg2rad(180.0 + margin_deg), np.deg2rad(270.0 - margin_deg)
    theta = np.linspace(lo, hi, n_rays)
    rmax = np.hypot(DOMAIN[1] - DOMAIN[0], DOMAIN[3] - DOMAIN[2])
    r = np.linspace(0.0, rmax, n_samples)[1:]
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    pts = np.asarray(center)[None, None, :] + r[None, :, None] * dirs[:, None, :]
    vals = evaluate_concentration(mesh, disc, state, pts.reshape(-1, 2)).reshape(n_rays, -1)
    radii = np.full(n_rays, np.nan)
    for i, v in enumerate(vals):
        below = np.flatnonzero(np.nan_to_num(v, nan=-np.inf) < level)
        if below.size == 0 or below[0] == 0:
            continue
        j = below[0]
        # linear interpolation between the bracketing samples
        s = (v[j - 1] - level) / (v[j - 1] - v[j])
        radii[i] = r[j - 1] + s * (r[j] - r[j - 1])
    return radii


def circularity(radii: np.ndarray) -> float:
    """Relative standard deviation of the level-set radius (inf if a ray missed)."""
    if np.any(~np.isfinite(radii)):
        return float("inf")
    return float(np.std(radii) / np.mean(radii))


def lower_mass_fraction(mesh: PolygonalMesh, state: SimulationState, disc: Discretization) -> float:
    """Share of the displaced volume ``int c`` lying in the lower layer ``y < 500``."""
    _, _, poly = reconstruct(mesh, state, disc)
    mass = poly[:, 0] * mesh.cell_area
    low = mesh.cell_centroid[:, 1] < LOWER_INTERFACE
    total = mass.sum()
    return float(mass[low].sum() / total) if total > 0 else float("nan")


def run_well_test(test_id: int, mesh_kind: str = "square32", tau_days: float = 36.0,
                  out_dir: str | Path | None = None, formats=("csv", "vtk"),
                  t_final: float | None = None) -> WellTestResult:
    """Run one of the four presets and collect snapshots at the checkpoint times."""
    if test_id not in PRESETS:
        raise ValueError(f"unknown well test {test_id}; expected 1..4")
    if mesh_kind not in MESHES:
        raise ValueError(f"unknown mesh kind {mesh_kind!r}; expected one of {sorted(MESHES)}")
    preset = PRESETS[test_id]
    mesh = MESHES[mesh_kind]()
    wells = place_wells(mesh, [Well(INJECTOR, RATE, 1.0), Well(PRODUCER, -RATE, 0.0)])
    coeffs = preset.coefficients(wells)
    checkpoints = [t for t in CHECKPOINTS if t_final is None or t <= t_final + 1e-9]
    t_end = t_final if t_final is not None else CHECKPOINTS[-1]
    n_steps = int(round(t_end / tau_days))
    save = {int(round(t / tau_days)): t for t in checkpoints}
    for n, t in save.items():
        if abs(n * tau_days - t) > 1e-9 * t:
            raise ValueError(f"time step {tau_days} does not hit checkpoint t={t}")
    disc = Discretization(mesh)
    cfg = SimulationConfig(mesh=mesh, coeffs=coeffs, tau=tau_days, n_steps=n_steps,
                           c0=0.0, p0=P_INIT, save_steps=tuple(save))
    states = time_loop(cfg, disc)
    snaps = {save[s.step_index]: s for s in states if s.step_index in save}
    res = WellTestResult(test_id, mesh, disc, snaps)
    first = snaps.get(CHECKPOINTS[0])
    if first is not None:
        res.metrics["circularity_1080"] = circularity(front_radii(mesh, disc, first))
    last = states[-1]
    res.metrics["lower_mass_fraction"] = lower_mass_fraction(mesh, last, disc)
    res.metrics["c_min"] = float(last.c_dofs.min())
    res.metrics["c_max"] = float(last.c_dofs.max())
    if test_id == 1:
        try:
            res.metrics["symmetry"] = max(symmetry_metric(mesh, s.c_dofs) for s in snaps.values())
        except ValueError:
            pass
    if out_dir is not None:
        from .export import export_field

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, s in snaps.items():
            for fmt in formats:
                path = out / f"test{test_id}_{mesh_kind}_t{int(t)}.{fmt}"
                export_field(mesh, s, fmt, path, disc=disc)
                res.files.append(path)
    log.info("well test %d on %s: %s", test_id, mesh_kind, res.metrics)
    return res
