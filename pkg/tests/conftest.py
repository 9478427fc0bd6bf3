import pytest

from layered_ac.one_dim import find_heteroclinics, scalar_connection
from layered_ac.optimize import MinimizeOptions
from layered_ac.potential import make_potential
from layered_ac.prism3d import PrismGrid, fill_ghosts, initial_prism, prism_energy, prism_table, solve_prism
from layered_ac.strip2d import solve_hetero2d

P = make_potential()


def prism_inputs(grid, p=P):
    """Grid-matched 1D level, the q2(0) > 0 branch, the strip table and the planar field for a prism."""
    n = 2 * grid.Nx + 1
    ms = find_heteroclinics(p, grid.X, n)
    q = ms.profiles[[i for i in ms.least() if ms.q2_at_0[i] > 0][0]]
    sc = scalar_connection(p, grid.X, n).energy
    tab = prism_table(p, ms.level, q, grid, sc)
    vq = solve_hetero2d(p, ms.level, q, grid.Jmax * grid.hy, grid.hy).field
    return ms.level, q, tab, vq


@pytest.fixture(scope="session")
def coarse_prism():
    # 12 x 12 x 12 nodes in the bounding box of the quarter prism
    grid = PrismGrid(2, X=2.75, Z=2.75, hx=0.25, hy=0.25, hz=0.25)
    return (grid,) + prism_inputs(grid)


@pytest.fixture(scope="session")
def small_prism():
    """A solved j = 2 prism with every iterate of the descent kept."""
    grid = PrismGrid(2, X=4.0, Z=3.0, hx=0.25, hy=0.3, hz=0.3)
    level, q, tab, vq = prism_inputs(grid)
    iterates = []
    E = prism_energy(P, level, tab, grid, cap=vq.quarter, base=initial_prism(grid, vq))
    sol = solve_prism(P, grid, level, tab, vq, MinimizeOptions(grad_tol=1e-8),
                      callback=lambda x, f, g: iterates.append(fill_ghosts(E.unpack(x), grid.J)))
    return grid, level, q, tab, vq, sol, iterates


# -- acceptance reporting -----------------------------------------------------------------
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ok, old = rep.passed, _CRITERIA.get(n)
    if old is not None:
        ok = ok and old[1]
        if not detail or detail in old[2]:
            detail = old[2]
        elif old[2]:
            detail = f"{old[2]}; {detail}"
    _CRITERIA[n] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
