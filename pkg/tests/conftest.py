import numpy as np
import pytest

from fracpucci import Field, build_grid, make_kernel


def smooth_field(grid, exterior=None, seed=0, modes=4):
    """Random trigonometric field on the interior nodes."""
    rng = np.random.default_rng(seed)
    x = grid.nodes - grid.center
    vals = np.zeros(grid.n_nodes)
    for _ in range(modes):
        k = rng.normal(size=grid.dim) * 3
        vals += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
    return Field(grid, vals) if exterior is None else Field(grid, vals, exterior)


@pytest.fixture(scope="session")
def interval64():
    return build_grid(1, "interval", 1.0, 1 / 64, 10.0)


@pytest.fixture(scope="session")
def interval256():
    return build_grid(1, "interval", 1.0, 1 / 256, 10.0)


@pytest.fixture(scope="session")
def disk8():
    return build_grid(2, "disk", 1.0, 1 / 8, 4.0)


@pytest.fixture(scope="session")
def box8():
    return build_grid(2, "box", 1.0, 1 / 8, 4.0)


@pytest.fixture(scope="session")
def k1():
    return make_kernel(1, 0.5, 1.0, 2.0)


@pytest.fixture(scope="session")
def k2():
    return make_kernel(2, 0.5, 1.0, 2.0, n_dirs=8)


# acceptance criteria report ---------------------------------------------------

ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        title, ok, detail = ACCEPTANCE.get(n, ("", False, "not run or errored"))
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'} {title} {detail}")
