import statistics
import time

import numpy as np
import pytest

from meshonet.errors import GeometryError
from meshonet.geometry import BoundaryCurve, GeometryCase, make_annulus_hole, make_arch, make_case, unit_square
from meshonet.mesh import CompGrid
from meshonet.tfi import tfi_generate


def test_unit_square_is_exact_lattice():
    mesh = tfi_generate(unit_square(), CompGrid(5, 5))
    X, Y = np.meshgrid(np.arange(5) * 0.25, np.arange(5) * 0.25, indexing="ij")
    assert np.array_equal(mesh.x, X) and np.array_equal(mesh.y, Y)


@pytest.mark.parametrize("c", [0.0, 0.3, 0.77, 1.0])
def test_boundary_rows_reproduce_curves(c):
    case = make_arch(c)
    grid = CompGrid(17, 11)
    mesh = tfi_generate(case, grid)
    nx, ny = case.curve("north").eval(grid.xi)
    assert np.array_equal(mesh.x[:, -1], nx) and np.array_equal(mesh.y[:, -1], ny)
    sx, sy = case.curve("south").eval(grid.xi)
    assert np.array_equal(mesh.x[:, 0], sx) and np.array_equal(mesh.y[:, 0], sy)
    wx, wy = case.curve("west").eval(grid.eta)
    assert np.array_equal(mesh.x[0], wx) and np.array_equal(mesh.y[0], wy)
    ex, ey = case.curve("east").eval(grid.eta)
    assert np.array_equal(mesh.x[-1], ex) and np.array_equal(mesh.y[-1], ey)


def test_coons_formula_oracle():
    case = make_arch(0.5)
    mesh = tfi_generate(case, CompGrid(17, 17))
    xi = eta = 0.5

    def P(side, t):
        x, y = case.curve(side).eval(t)
        return np.array([float(x), float(y)])

    S, N, W, E = P("south", xi), P("north", xi), P("west", eta), P("east", eta)
    P00, P10, P01, P11 = P("south", 0.0), P("south", 1.0), P("north", 0.0), P("north", 1.0)
    expect = (
        (1 - eta) * S + eta * N + (1 - xi) * W + xi * E
        - ((1 - xi) * (1 - eta) * P00 + xi * (1 - eta) * P10 + (1 - xi) * eta * P01 + xi * eta * P11)
    )
    # by hand: y = 0.75 + 0.5 - 0.25 * (0 + 0 + 1 + 1) = 0.75
    assert expect == pytest.approx([0.5, 0.75], abs=1e-15)
    assert (mesh.x[8, 8], mesh.y[8, 8]) == pytest.approx(tuple(expect), abs=1e-14)


@pytest.mark.parametrize("family,param", [("arch", 0.6), ("hexagon", 0.3), ("semicircle", 0.4), ("annulus", 0.42)])
def test_affine_equivariance(family, param):
    case = make_case(family, param)
    A = np.array([[1.3, -0.4], [0.2, 0.9]])
    b = np.array([2.0, -1.5])

    def mapped(curve):
        def fn(t):
            x, y = curve.eval(t)
            return A[0, 0] * x + A[0, 1] * y + b[0], A[1, 0] * x + A[1, 1] * y + b[1]

        return BoundaryCurve(curve.side, fn)

    moved_case = GeometryCase(case.topology, tuple(mapped(c) for c in case.curves), family, param)
    grid = CompGrid(13, 9, case.topology)
    m0 = tfi_generate(case, grid)
    m1 = tfi_generate(moved_case, grid)
    np.testing.assert_allclose(m1.x, A[0, 0] * m0.x + A[0, 1] * m0.y + b[0], atol=1e-12)
    np.testing.assert_allclose(m1.y, A[1, 0] * m0.x + A[1, 1] * m0.y + b[1], atol=1e-12)


def test_corner_mismatch_rejected():
    sq = unit_square()
    shifted = BoundaryCurve("north", lambda t: (t, 1.0 + 1e-9 + 0 * t))
    bad = GeometryCase("H", (sq.curves[0], sq.curves[1], shifted, sq.curves[3]), "bad", 0.0)
    with pytest.raises(GeometryError):
        tfi_generate(bad, CompGrid(5, 5))


def test_o_topology_radial_blend():
    case = make_annulus_hole(0.5)
    grid = CompGrid(16, 5, "O")
    mesh = tfi_generate(case, grid)
    ix, iy = case.curve("inner").eval(grid.xi)
    ox, oy = case.curve("outer").eval(grid.xi)
    assert np.array_equal(mesh.x[:, 0], ix) and np.array_equal(mesh.y[:, -1], oy)
    np.testing.assert_allclose(mesh.x[:, 2], 0.5 * (ix + ox), atol=1e-15)


def test_topology_mismatch():
    with pytest.raises(GeometryError):
        tfi_generate(make_arch(0.2), CompGrid(5, 5, "O"))


def test_runtime_linear_in_points():
    case = make_arch(0.5)
    sizes = [65, 129, 193, 257, 385, 513]
    pts, times = [], []
    for n in sizes:
        grid = CompGrid(n, n)
        tfi_generate(case, grid)
        runs = []
        for _ in range(5):
            t0 = time.perf_counter()
            tfi_generate(case, grid)
            runs.append(time.perf_counter() - t0)
        pts.append(n * n)
        times.append(statistics.median(runs))
    slope, icpt = np.polyfit(pts, times, 1)
    pred = slope * np.array(pts) + icpt
    r2 = 1 - np.sum((times - pred) ** 2) / np.sum((times - np.mean(times)) ** 2)
    assert r2 >= 0.95
