"""Transfinite interpolation: bilinear Coons patch (H) and radial blending (O)."""
from __future__ import annotations

import numpy as np

from .errors import GeometryError
from .geometry import GeometryCase
from .mesh import CompGrid, PhysMesh

CORNER_TOL = 1e-12


def _corner_gap(case: GeometryCase) -> float:
    s, e, n, w = (case.curve(k) for k in ("south", "east", "north", "west"))
    pairs = [(s(1.0), e(0.0)), (e(1.0), n(1.0)), (n(0.0), w(1.0)), (w(0.0), s(0.0))]
    return max(float(np.hypot(a[0] - b[0], a[1] - b[1])) for a, b in pairs)


def tfi_generate(case: GeometryCase, grid: CompGrid) -> PhysMesh:
    if grid.topology != case.topology:
        raise GeometryError(f"grid topology {grid.topology} does not match case topology {case.topology}")
    xi, eta = grid.xi, grid.eta
    if case.topology == "O":
        ix, iy = case.curve("inner").eval(xi)
        ox, oy = case.curve("outer").eval(xi)
        e = eta[None, :]
        x = (1.0 - e) * ix[:, None] + e * ox[:, None]
        y = (1.0 - e) * iy[:, None] + e * oy[:, None]
        x[:, 0], y[:, 0] = ix, iy
        x[:, -1], y[:, -1] = ox, oy
        return PhysMesh(x, y, "O")

    gap = _corner_gap(case)
    if gap > CORNER_TOL:
        raise GeometryError(f"boundary curves do not meet at the corners (gap {gap:.3e})")
    sx, sy = case.curve("south").eval(xi)
    nx, ny = case.curve("north").eval(xi)
    wx, wy = case.curve("west").eval(eta)
    ex, ey = case.curve("east").eval(eta)
    X, E = np.meshgrid(xi, eta, indexing="ij")

    def coons(s, n, w, e):
        p00, p10, p01, p11 = s[0], s[-1], n[0], n[-1]
        return (
            (1.0 - E) * s[:, None]
            + E * n[:, None]
            + (1.0 - X) * w[None, :]
            + X * e[None, :]
            - ((1.0 - X) * (1.0 - E) * p00 + X * (1.0 - E) * p10 + (1.0 - X) * E * p01 + X * E * p11)
        )

    x = coons(sx, nx, wx, ex)
    y = coons(sy, ny, wy, ey)
    # boundary rows/columns are the curve samples themselves, not a rounded blend
    x[:, 0], y[:, 0] = sx, sy
    x[:, -1], y[:, -1] = nx, ny
    x[0, :], y[0, :] = wx, wy
    x[-1, :], y[-1, :] = ex, ey
    return PhysMesh(x, y, "H")
