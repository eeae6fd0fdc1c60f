import csv
import json
import math
import re
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vem_miscible import cli
from vem_miscible.harness.convergence import (
    CSV_COLUMNS,
    ConvergenceRow,
    compute_errors,
    observed_order,
    rows_to_csv,
    rows_to_text,
    run_convergence,
    solve_manufactured,
    steps_for,
)
from vem_miscible.harness.export import CSV_HEADER, cell_fields, export_field
from vem_miscible.harness.problems import X, Y, T, SourceValidationError, example1, validate_sources
from vem_miscible.harness.welltest import (
    PRESETS,
    circularity,
    diagonal_permutation,
    evaluate_concentration,
    lower_mass_fraction,
    run_well_test,
    symmetry_metric,
)
from vem_miscible.mesh import build_family_mesh, build_square_mesh, read_mesh
from vem_miscible.system import Discretization, SimulationState, set_initial
from vem_miscible.vemspaces import edge_means, normal_flux_means


@pytest.fixture(scope="module")
def ex1():
    return example1()


def zero_state(mesh, t=0.1):
    return SimulationState(np.zeros(mesh.n_edges), np.zeros(mesh.n_cells), np.zeros(mesh.n_edges), t)


def exact_state(mesh, prob, t):
    disc = Discretization(mesh)
    s = set_initial(disc, lambda x, y: prob.exact_c(x, y, t), lambda x, y: prob.exact_p(x, y, t),
                    lambda x, y: prob.exact_u(x, y, t))
    s.t = t
    return s


class TestManufactured:
    def test_sources_vanish_at_t0(self, ex1):
        rng = np.random.default_rng(0)
        x, y = rng.uniform(size=(2, 50))
        assert np.abs(ex1.source_q(x, y, 0.0)).max() == 0.0
        assert np.abs(ex1.source_f(x, y, 0.0)).max() == 0.0
        assert np.abs(ex1.exact_c(x, y, 0.0)).max() == 0.0
        assert np.abs(ex1.exact_p(x, y, 0.0)).max() == 0.0

    def test_c_at_center(self, ex1):
        assert float(ex1.exact_c(0.5, 0.5, 0.1)) == pytest.approx(0.00125, rel=1e-14)

    def test_darcy_identity(self, ex1):
        grad_p = [sp.lambdify((X, Y, T), sp.diff(ex1.p_expr, v)) for v in (X, Y)]
        rng = np.random.default_rng(1)
        x, y = rng.uniform(size=(2, 200))
        t = rng.uniform(0, 0.1, 200)
        c = ex1.exact_c(x, y, t)
        a = 1.0 / ex1.coefficients().A(c)
        ux, uy = ex1.exact_u(x, y, t)
        assert np.abs(ux + a * grad_p[0](x, y, t)).max() < 1e-10
        assert np.abs(uy + a * grad_p[1](x, y, t)).max() < 1e-10

    def test_gate_passes(self, ex1):
        errs = validate_sources(ex1)
        assert max(errs.values()) < 1e-6

    def test_gate_catches_wrong_source(self):
        bad = example1()
        good_f = bad.source_f
        bad.__dict__["source_f"] = lambda x, y, t: good_f(x, y, t) + 1e-4 * x
        with pytest.raises(SourceValidationError):
            validate_sources(bad)
        with pytest.raises(SourceValidationError):
            run_convergence("square", 2, problem=bad)


class TestErrors:
    def test_zero_state(self, ex1):
        mesh = build_square_mesh(4)
        s = zero_state(mesh)
        assert compute_errors(mesh, s, ex1) == pytest.approx((1.0, 1.0, 1.0), rel=1e-14)
        eu, ep, ec = compute_errors(mesh, s, ex1, relative=False)
        # |c|^2 = (2/630 + 2/900) t^4 exactly
        assert ec == pytest.approx(math.sqrt((2 / 630 + 2 / 900) * 0.1**4), rel=1e-12)
        assert eu > 0 and ep > 0

    def test_interpolated_state(self, ex1):
        mesh = build_square_mesh(16)
        s = exact_state(mesh, ex1, 0.1)
        _, _, ec = compute_errors(mesh, s, ex1, relative=False)
        assert ec < 1e-3
        _, _, ec_rel = compute_errors(mesh, s, ex1)
        coarse = build_square_mesh(8)
        _, _, ec_coarse = compute_errors(coarse, exact_state(coarse, ex1, 0.1), ex1)
        assert ec_coarse / ec_rel == pytest.approx(4.0, rel=0.1)

    def test_quadrature_converged(self, ex1):
        mesh = build_family_mesh("concave", 2)
        s = solve_manufactured(mesh, 0.01, ex1)
        e8 = compute_errors(mesh, s, ex1, degree=8)
        e10 = compute_errors(mesh, s, ex1, degree=10)
        assert np.allclose(e8, e10, rtol=1e-3, atol=0)


class TestOrders:
    def test_halving(self):
        assert observed_order(1.0, 0.5, 0.2, 0.1) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(e=st.floats(1e-8, 1.0), p=st.floats(0.25, 3.0), h=st.floats(1e-3, 1.0), r=st.floats(1.2, 4.0))
    def test_recovers_power_law(self, e, p, h, r):
        assert observed_order(e, e * r**-p, h, h / r) == pytest.approx(p, rel=1e-9)

    def test_steps_for(self):
        assert steps_for(0.1, 0.02) == 5
        assert steps_for(0.1, 0.000625) == 160
        with pytest.raises(ValueError):
            steps_for(0.1, 0.03)

    def test_needs_two_levels(self):
        with pytest.raises(ValueError):
            run_convergence("square", 1)


class TestTables:
    def test_csv_columns_and_rerun(self):
        a = rows_to_csv(run_convergence("square", 2, 0.02))
        b = rows_to_csv(run_convergence("square", 2, 0.02))
        assert a == b
        lines = a.splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        first = next(csv.DictReader(lines))
        assert first["order_u"] == "" and float(first["tau"]) == 0.02

    def test_failed_row_is_annotated(self, monkeypatch):
        import vem_miscible.harness.convergence as conv

        real = conv.solve_manufactured

        def flaky(mesh, tau, problem=None, **kw):
            if mesh.n_cells > 16:
                raise RuntimeError("boom")
            return real(mesh, tau, problem, **kw)

        monkeypatch.setattr(conv, "solve_manufactured", flaky)
        rows = run_convergence("square", 2)
        assert rows[1].note.startswith("failed") and math.isnan(rows[1].err_u)
        assert ",,,,,," in rows_to_csv(rows).splitlines()[2]
        assert "# failed" in rows_to_text(rows)

    def test_text_layout(self):
        rows = [ConvergenceRow(0.5, 0.02, 0.1, math.nan, 0.2, math.nan, 0.3, math.nan),
                ConvergenceRow(0.25, 0.01, 0.05, 1.0, 0.1, 1.0, 0.15, 1.0)]
        text = rows_to_text(rows).splitlines()
        assert len(text) == 4 and "1.0000" in text[3] and "-" in text[2]


class TestReferenceValues:
    def test_square_finest_velocity(self, square_study):
        assert round(square_study[-1].err_u, 6) == 0.029607

    def test_square_finest_concentration(self, square_study):
        # the reference c values are sqrt(2) times ours at every level (different normalization)
        assert square_study[-1].err_c * math.sqrt(2) == pytest.approx(0.016387, rel=5e-3)

    def test_square_finest_pressure(self, square_study):
        # ours adds a backward Euler time error on top of the P0 approximation error
        assert square_study[-1].err_p == pytest.approx(0.028522, rel=0.05)

    def test_square_order_p_trend(self, square_study):
        reference = [0.9843, 0.9906, 0.9973, 0.9993]
        ours = [r.order_p for r in square_study[1:]]
        assert np.abs(np.subtract(ours, reference)).max() < 0.07
        # approaching one from above on the last three refinements
        assert ours[1] > ours[2] > ours[3] > 1.0

    def test_triangle_final_order_u(self, triangle_study):
        assert triangle_study[-1].order_u == pytest.approx(0.9980, abs=5e-4)


class TestExport:
    def test_zero_state_csv(self, tmp_path):
        mesh = build_family_mesh("voronoi-s", 2)
        path = export_field(mesh, zero_state(mesh), "csv", tmp_path / "z.csv")
        rows = list(csv.reader(path.open()))
        assert tuple(rows[0]) == CSV_HEADER
        assert len(rows) - 1 == mesh.n_cells
        body = np.array(rows[1:], dtype=float)
        assert np.allclose(body[:, :2], mesh.cell_centroid, atol=0)
        assert not body[:, 2:].any()

    def test_centroid_values(self, ex1):
        mesh = build_square_mesh(4)
        disc = Discretization(mesh)
        s = set_initial(disc, lambda x, y: 2 * x - y + 1, 5.0, lambda x, y: (np.ones_like(x), 0 * y))
        f = cell_fields(mesh, s, disc)
        cx, cy = mesh.cell_centroid.T
        assert np.allclose(f["c"], 2 * cx - cy + 1, atol=1e-14)
        assert np.all(f["p"] == 5.0)
        # boundary fluxes are zeroed, so only interior cells see u = (1, 0)
        assert np.all(f["ux"] <= 1.0 + 1e-14)

    def test_vtk_parses(self, tmp_path):
        meshio = pytest.importorskip("meshio")
        mesh = build_family_mesh("concave", 2)
        disc = Discretization(mesh)
        rng = np.random.default_rng(0)
        s = SimulationState(rng.normal(size=mesh.n_edges) * ~mesh.boundary, rng.normal(size=mesh.n_cells),
                            rng.normal(size=mesh.n_edges))
        path = export_field(mesh, s, "vtk", tmp_path / "s.vtk", disc)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            m = meshio.read(path)
        assert np.allclose(m.points[:, :2], mesh.vertices, atol=0)
        cells = [c for block in m.cells for c in block.data]
        assert len(cells) == mesh.n_cells
        for k, c in enumerate(cells):
            assert list(c) == mesh.cell_vertex_ids(k).tolist()
        # meshio drops cell data for polygon cells, so read that block by hand
        data = parse_cell_data(path.read_text())
        f = cell_fields(mesh, s, disc)
        assert np.array_equal(data["c"], f["c"]) and np.array_equal(data["p"], f["p"])
        assert np.array_equal(data["u"][:, 0], f["ux"]) and not data["u"][:, 2].any()

    def test_errors(self, tmp_path):
        mesh = build_square_mesh(1)
        with pytest.raises(ValueError, match="format"):
            export_field(mesh, zero_state(mesh), "xml", tmp_path / "a.xml")
        missing = tmp_path / "no" / "such" / "dir" / "a.csv"
        with pytest.raises(OSError, match=re.escape(str(missing))):
            export_field(mesh, zero_state(mesh), "csv", missing)


def parse_cell_data(text):
    lines = text.splitlines()
    i = next(j for j, ln in enumerate(lines) if ln.startswith("CELL_DATA"))
    n = int(lines[i].split()[1])
    out, i = {}, i + 1
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "SCALARS":
            out[head[1]] = np.array(lines[i + 2:i + 2 + n], dtype=float)
            i += 2 + n
        elif head[0] == "VECTORS":
            out[head[1]] = np.array([ln.split() for ln in lines[i + 1:i + 1 + n]], dtype=float)
            i += 1 + n
        else:
            raise AssertionError(f"unexpected line {lines[i]!r}")
    return out


class TestWellHelpers:
    def test_permeability(self):
        x = np.array([100.0, 100.0, 900.0])
        y = np.array([100.0, 499.0, 700.0])
        for tid in (3, 4):
            assert PRESETS[tid].permeability(x, y).tolist() == [1000.0, 1000.0, 400.0]
        assert np.all(PRESETS[1].permeability(x, y) == 1000.0)
        assert [PRESETS[t].mobility_ratio for t in (1, 2, 3, 4)] == [1.0, 41.0, 1.0, 41.0]

    def test_mobility_law(self):
        co = PRESETS[2].coefficients(None)
        # a(c) = k (1 + (M^1/4 - 1) c)^4 -> a(1) = k M
        assert 1.0 / co.A(np.array(1.0), 0.0, 0.0) == pytest.approx(1000.0 * 41.0, rel=1e-12)
        assert 1.0 / co.A(np.array(0.0), 0.0, 0.0) == pytest.approx(1000.0, rel=1e-12)

    def test_diagonal_permutation(self):
        mesh = build_square_mesh(6, (0, 1000, 0, 1000))
        perm = diagonal_permutation(mesh)
        assert np.array_equal(perm[perm], np.arange(mesh.n_edges))
        assert np.allclose(mesh.edge_midpoint[perm], mesh.edge_midpoint[:, ::-1])
        c = edge_means(mesh, lambda x, y: (x * y + x + y) / 1e6)
        assert symmetry_metric(mesh, c) < 1e-12
        assert symmetry_metric(mesh, edge_means(mesh, lambda x, y: x / 1e3)) > 0.1

    def test_asymmetric_mesh_rejected(self):
        with pytest.raises(ValueError):
            diagonal_permutation(build_family_mesh("voronoi-r", 2))

    def test_circularity(self):
        assert circularity(np.full(5, 3.0)) == 0.0
        assert circularity(np.array([1.0, np.nan])) == math.inf
        assert circularity(np.array([1.0, 3.0])) == pytest.approx(0.5)

    def test_evaluate_concentration(self):
        mesh = build_family_mesh("triangle", 2)
        disc = Discretization(mesh)
        s = set_initial(disc, lambda x, y: 3 * x + y)
        pts = np.array([[0.1, 0.2], [0.77, 0.31], [1.5, 0.5]])
        got = evaluate_concentration(mesh, disc, s, pts)
        assert np.allclose(got[:2], 3 * pts[:2, 0] + pts[:2, 1], atol=1e-14)
        assert math.isnan(got[2])

    def test_lower_mass_fraction_uniform(self):
        mesh = build_square_mesh(4, (0, 1000, 0, 1000))
        disc = Discretization(mesh)
        s = set_initial(disc, 0.4)
        assert lower_mass_fraction(mesh, s, disc) == pytest.approx(0.5, rel=1e-14)
        assert math.isnan(lower_mass_fraction(mesh, set_initial(disc, 0.0), disc))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            run_well_test(5)
        with pytest.raises(ValueError):
            run_well_test(1, "hexagon64")
        with pytest.raises(ValueError):
            run_well_test(1, "triangle512", tau_days=50.0)

    def test_short_run(self, tmp_path):
        res = run_well_test(1, "triangle512", out_dir=tmp_path, t_final=1080.0)
        assert list(res.snapshots) == [1080.0]
        assert sorted(p.name for p in res.files) == ["test1_triangle512_t1080.csv", "test1_triangle512_t1080.vtk"]
        # well rates balance, so the pressure stays near its initial level
        s = res.snapshots[1080.0]
        assert abs(np.sum(s.p_dofs * res.mesh.cell_area) / 1e6 - 3000.0) < 1.0
        assert res.metrics["circularity_1080"] < 0.1


class TestCli:
    def test_meshgen(self, tmp_path, capsys):
        out = tmp_path / "m.txt"
        assert cli.main(["meshgen", "--family", "concave", "--level", "2", "--out", str(out)]) == 0
        assert read_mesh(out).n_cells == 32
        assert "star-shapedness" in capsys.readouterr().out

    def test_meshgen_domain(self, tmp_path):
        out = tmp_path / "m.txt"
        assert cli.main(["meshgen", "--family", "square", "--n", "3", "--domain", "0", "2", "0", "1",
                         "--out", str(out)]) == 0
        assert read_mesh(out).cell_area.sum() == pytest.approx(2.0)

    def test_converge(self, tmp_path):
        assert cli.main(["converge", "--family", "square", "--levels", "2", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "convergence.csv").read_text().startswith("h,tau,err_u,order_u")
        assert (tmp_path / "convergence.txt").exists()

    def test_welltest_triangle(self, tmp_path):
        assert cli.main(["welltest", "--test", "1", "--mesh", "triangle512", "--out", str(tmp_path)]) == 0
        metrics = json.loads((tmp_path / "test1_triangle512_metrics.json").read_text())
        assert set(metrics) >= {"circularity_1080", "lower_mass_fraction", "symmetry"}
        assert len(list(tmp_path.glob("*.vtk"))) == 2

    def test_run_custom(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# small custom run\n"
            "preset = custom\nmesh = square\nn = 4\ntau = 0.25\nT = 1\n"
            "d_m = 0.01\nwells = 0.9, 0.9, 1, 1; 0.1, 0.1, -1, 0\n"
            f"out = {tmp_path / 'out'}\nformats = csv\nstride = 2\n"
        )
        assert cli.main(["run", "--config", str(cfg)]) == 0
        assert "4 steps" in capsys.readouterr().out
        names = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert names == ["state_00000.csv", "state_00002.csv", "state_00004.csv"]

    def test_run_example1(self, tmp_path, capsys):
        cfg = tmp_path / "ex.cfg"
        cfg.write_text("preset = example1\nmesh = square\nlevel = 1\ntau = 0.02\n")
        assert cli.main(["run", "--config", str(cfg)]) == 0
        assert "relative L2 errors" in capsys.readouterr().out

    @pytest.mark.parametrize("text, match", [
        ("colour = red\n", "unknown key"),
        ("just words\n", "expected key = value"),
    ])
    def test_parse_errors(self, text, match):
        with pytest.raises(cli.ConfigError, match=match):
            cli.parse_config(text)

    @pytest.mark.parametrize("text", [
        "preset = nonsense\nn = 2\n",
        "mesh = hexagon\nn = 2\n",
        "preset = example1\n",
        "n = 2\ntau = 0.03\n",
        "n = 2\nkh_iterations = 9\n",
        "preset = custom\nn = 2\nwells = 1, 2, 3\n",
    ])
    def test_bad_configs_exit_2(self, tmp_path, text):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(text)
        assert cli.main(["run", "--config", str(cfg)]) == 2

    def test_missing_config(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2
