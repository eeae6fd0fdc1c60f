import time

import numpy as np
import pytest

from vem_miscible.mesh import FAMILIES, CellGeometry, build_family_mesh

UNIT_SQUARE_CELL = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
# non-convex hexagon from the concave family (cut a = 0.15 of the unit square)
CHEVRON_CELL = np.array(
    [[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [2 / 3, 0.35], [1 / 3, 0.65], [0.0, 0.5]]
)
PENTAGON_CELL = np.array([[0.0, 0.0], [2.0, 0.0], [2.5, 1.2], [1.0, 2.0], [-0.4, 1.1]])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config._acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        item.config._acceptance.append((mark.args[0], "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not config._acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in config._acceptance:
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def unit_square():
    return CellGeometry(UNIT_SQUARE_CELL.copy())


@pytest.fixture(scope="session")
def small_meshes():
    """Level-2 mesh of every family."""
    return {f: build_family_mesh(f, 2) for f in FAMILIES}


@pytest.fixture(scope="session")
def sampled_cells():
    """100 cells drawn from levels 2-3 of all five families, as single-cell geometries."""
    rng = np.random.default_rng(2024)
    pool = []
    for fam in FAMILIES:
        for lvl in (2, 3):
            mesh = build_family_mesh(fam, lvl, seed=0)
            pool += [mesh.cell_polygon(k) for k in range(mesh.n_cells)]
    pick = rng.choice(len(pool), size=100, replace=False)
    return [CellGeometry(pool[i]) for i in pick]


# expensive studies shared by the harness and acceptance modules

STUDY_SECONDS: dict[str, float] = {}


def timed_study(family, levels, tau0):
    from vem_miscible.harness.convergence import run_convergence

    start = time.perf_counter()
    rows = run_convergence(family, levels, tau0, seed=0)
    STUDY_SECONDS[family] = time.perf_counter() - start
    return rows


@pytest.fixture(scope="session")
def square_study():
    return timed_study("square", 5, 0.02)


@pytest.fixture(scope="session")
def triangle_study():
    return timed_study("triangle", 6, 0.01)


@pytest.fixture(scope="session")
def welltest1(tmp_path_factory):
    from vem_miscible.harness.welltest import run_well_test

    return run_well_test(1, "square32", out_dir=tmp_path_factory.mktemp("test1"))
