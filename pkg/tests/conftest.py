import numpy as np
import pytest

from meshonet.geometry import make_case
from meshonet.mesh import CompGrid, PhysMesh


def uniform_mesh(n_xi, n_eta):
    xi = np.arange(n_xi) / (n_xi - 1)
    eta = np.arange(n_eta) / (n_eta - 1)
    X, E = np.meshgrid(xi, eta, indexing="ij")
    return PhysMesh(X, E, "H")


@pytest.fixture
def uniform():
    return uniform_mesh


@pytest.fixture(scope="session")
def arch_elliptic_33():
    from meshonet.elliptic import SolverConfig, elliptic_solve

    case = make_case("arch", 0.5)
    return case, elliptic_solve(case, CompGrid(33, 33), SolverConfig(omega=1.3, tol=1e-8))


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores the verdict for acceptance criterion ``n``."""

    def _record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
