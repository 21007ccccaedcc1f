"""Compiled and pure-Python SOR sweeps must agree bit for bit."""
import os
import subprocess
import sys

import numpy as np
import pytest

from meshonet import kernels
from meshonet.elliptic import elliptic_solve
from meshonet.geometry import make_case
from meshonet.mesh import CompGrid
from meshonet.tfi import tfi_generate

compiled = kernels.compiled_sor_sweep()
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@needs_ext
def test_backend_is_compiled_by_default():
    assert kernels.BACKEND == "cython"


@needs_ext
@pytest.mark.parametrize("family,param", [("arch", 0.7), ("hexagon", 0.4), ("semicircle", 0.3), ("annulus", 0.6)])
@pytest.mark.parametrize("omega", [0.8, 1.3, 1.9])
def test_single_sweep_bit_identical(family, param, omega):
    case = make_case(family, param)
    grid = CompGrid(13, 11, case.topology)
    mesh = tfi_generate(case, grid)
    rng = np.random.default_rng(3)
    noise = rng.normal(scale=1e-2, size=(2,) + mesh.x.shape) * ~grid.boundary_mask()
    xa, ya = mesh.x + noise[0], mesh.y + noise[1]
    xb, yb = xa.copy(), ya.copy()
    da = compiled(xa, ya, omega, grid.topology == "O")
    db = kernels.python_sor_sweep(xb, yb, omega, grid.topology == "O")
    assert da == db
    assert xa.tobytes() == xb.tobytes() and ya.tobytes() == yb.tobytes()


@needs_ext
def test_full_solve_bit_identical():
    case = make_case("annulus", 0.45)
    grid = CompGrid(16, 9, "O")
    a = elliptic_solve(case, grid, sweep=compiled)
    b = elliptic_solve(case, grid, sweep=kernels.python_sor_sweep)
    assert a.history == b.history and a.mesh == b.mesh


def test_env_var_forces_fallback():
    env = dict(os.environ, MESHONET_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from meshonet import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
