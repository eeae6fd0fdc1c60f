"""Cell-wise field export (CSV table, legacy ASCII VTK)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..mesh import PolygonalMesh
from ..system import Discretization, SimulationState
from .convergence import reconstruct

CSV_HEADER = ("x", "y", "c", "p", "ux", "uy")


def cell_fields(mesh: PolygonalMesh, state: SimulationState, disc: Discretization | None = None):
    """Centroid values: affine concentration, cell pressure and constant velocity."""
    u, p, poly = reconstruct(mesh, state, disc)
    # the scaled monomials vanish at the centroid
    return {"c": poly[:, 0], "p": p, "ux": u[:, 0], "uy": u[:, 1]}


def write_csv(mesh: PolygonalMesh, fields: dict, path: Path) -> None:
    xy = mesh.cell_centroid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for k in range(mesh.n_cells):
            w.writerow([repr(float(v)) for v in (xy[k, 0], xy[k, 1], fields["c"][k],
                                                   fields["p"][k], fields["ux"][k], fields["uy"][k])])


def write_vtk(mesh: PolygonalMesh, fields: dict, path: Path, title: str = "vem-miscible") -> None:
    polys = [mesh.cell_vertex_ids(k) for k in range(mesh.n_cells)]
    size = sum(len(p) + 1 for p in polys)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {mesh.n_cells} {size}")
    lines += [" ".join(map(str, [len(p), *p])) for p in polys]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["7"] * mesh.n_cells  # VTK_POLYGON
    lines.append(f"CELL_DATA {mesh.n_cells}")
    for name in ("c", "p"):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in fields[name]]
    lines.append("VECTORS u double")
    lines += [f"{ux!r} {uy!r} 0.0" for ux, uy in zip(fields["ux"].tolist(), fields["uy"].tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def export_field(mesh: PolygonalMesh, state: SimulationState, fmt: str, path,
                 disc: Discretization | None = None) -> Path:
    """Write the cell fields of ``state`` as ``csv`` or ``vtk``."""
    path = Path(path)
    if fmt not in ("csv", "vtk"):
        raise ValueError(f"unknown export format {fmt!r}")
    fields = cell_fields(mesh, state, disc)
    try:
        (write_csv if fmt == "csv" else write_vtk)(mesh, fields, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path
