"""Winslow elliptic grid generator solved by point SOR on the index lattice."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, DivergenceError
from .geometry import GeometryCase
from .mesh import CompGrid, PhysMesh
from .tfi import tfi_generate


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 1.3
    tol: float = 1e-8
    max_iters: int | None = None  # None -> 100 * max(n_xi, n_eta)**2
    init: PhysMesh | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (0.0 < self.omega < 2.0):
            raise ContractError(f"omega must lie in (0, 2), got {self.omega}")
        if not (self.tol > 0.0):
            raise ContractError(f"tol must be positive, got {self.tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ContractError(f"max_iters must be >= 1, got {self.max_iters}")

    def iteration_cap(self, grid: CompGrid) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return 100 * max(grid.n_xi, grid.n_eta) ** 2

    def key(self) -> str:
        """Canonical text used for hashing dataset provenance."""
        return f"omega={self.omega!r};tol={self.tol!r};max_iters={self.max_iters!r}"


@dataclass
class SolveResult:
    mesh: PhysMesh
    iterations: int
    wall_time: float
    converged: bool
    history: list[float]

    def history_csv(self) -> str:
        lines = ["sweep,max_update"]
        lines.extend(f"{k + 1},{v:.17g}" for k, v in enumerate(self.history))
        return "\n".join(lines) + "\n"


def _derivatives(x, y, periodic):
    """First/second central differences at interior points (unit index spacing)."""
    if periodic:
        e = lambda a: np.roll(a, -1, axis=0)[:, 1:-1]  # noqa: E731
        w = lambda a: np.roll(a, 1, axis=0)[:, 1:-1]  # noqa: E731
        c = lambda a: a[:, 1:-1]  # noqa: E731
        n = lambda a: a[:, 2:]  # noqa: E731
        s = lambda a: a[:, :-2]  # noqa: E731
        ne = lambda a: np.roll(a, -1, axis=0)[:, 2:]  # noqa: E731
        se = lambda a: np.roll(a, -1, axis=0)[:, :-2]  # noqa: E731
        nw = lambda a: np.roll(a, 1, axis=0)[:, 2:]  # noqa: E731
        sw = lambda a: np.roll(a, 1, axis=0)[:, :-2]  # noqa: E731
    else:
        e = lambda a: a[2:, 1:-1]  # noqa: E731
        w = lambda a: a[:-2, 1:-1]  # noqa: E731
        c = lambda a: a[1:-1, 1:-1]  # noqa: E731
        n = lambda a: a[1:-1, 2:]  # noqa: E731
        s = lambda a: a[1:-1, :-2]  # noqa: E731
        ne = lambda a: a[2:, 2:]  # noqa: E731
        se = lambda a: a[2:, :-2]  # noqa: E731
        nw = lambda a: a[:-2, 2:]  # noqa: E731
        sw = lambda a: a[:-2, :-2]  # noqa: E731
    out = {}
    for name, a in (("x", x), ("y", y)):
        out[name + "_xi"] = 0.5 * (e(a) - w(a))
        out[name + "_eta"] = 0.5 * (n(a) - s(a))
        out[name + "_xixi"] = e(a) - 2.0 * c(a) + w(a)
        out[name + "_etaeta"] = n(a) - 2.0 * c(a) + s(a)
        out[name + "_xieta"] = 0.25 * (ne(a) - se(a) - nw(a) + sw(a))
    return out


def _coefficients(d):
    alpha = d["x_eta"] ** 2 + d["y_eta"] ** 2
    beta = d["x_xi"] * d["x_eta"] + d["y_xi"] * d["y_eta"]
    gamma = d["x_xi"] ** 2 + d["y_xi"] ** 2
    return alpha, beta, gamma


def winslow_coefficients(mesh: PhysMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(alpha, beta, gamma) at interior lattice points."""
    return _coefficients(_derivatives(mesh.x, mesh.y, mesh.topology == "O"))


def winslow_residual(mesh: PhysMesh) -> tuple[np.ndarray, np.ndarray]:
    """alpha*f_xixi - 2*beta*f_xieta + gamma*f_etaeta for f = x and f = y at interior points."""
    if mesh.n_xi < 3 or mesh.n_eta < 3:
        raise ContractError("residual needs at least 3 points per direction")
    d = _derivatives(mesh.x, mesh.y, mesh.topology == "O")
    alpha, beta, gamma = _coefficients(d)
    rx = alpha * d["x_xixi"] - 2.0 * beta * d["x_xieta"] + gamma * d["x_etaeta"]
    ry = alpha * d["y_xixi"] - 2.0 * beta * d["y_xieta"] + gamma * d["y_etaeta"]
    return rx, ry


def elliptic_solve(
    case: GeometryCase,
    grid: CompGrid,
    cfg: SolverConfig | None = None,
    sweep=None,
) -> SolveResult:
    """Point-SOR solve of the Winslow system with Dirichlet boundaries.

    Non-convergence within the iteration cap is reported through
    ``SolveResult.converged``; a NaN update raises :class:`DivergenceError`.
    ``sweep`` overrides the kernel (defaults to the compiled one when built).
    """
    cfg = cfg or SolverConfig()
    sweep = sweep or kernels.sor_sweep
    if cfg.init is None:
        init = tfi_generate(case, grid)
    else:
        init = cfg.init
        ref = tfi_generate(case, grid)
        mask = grid.boundary_mask()
        if init.grid != grid or not (
            np.array_equal(init.x[mask], ref.x[mask]) and np.array_equal(init.y[mask], ref.y[mask])
        ):
            raise ContractError("initial mesh boundary does not match the case boundary")
    x = np.ascontiguousarray(init.x, dtype=float).copy()
    y = np.ascontiguousarray(init.y, dtype=float).copy()
    periodic = grid.topology == "O"
    cap = cfg.iteration_cap(grid)
    history: list[float] = []
    converged = False
    t0 = time.perf_counter()
    for it in range(1, cap + 1):
        upd = sweep(x, y, cfg.omega, periodic)
        if upd != upd:
            raise DivergenceError(f"NaN encountered in SOR sweep {it}")
        history.append(upd)
        if upd < cfg.tol:
            converged = True
            break
    wall = time.perf_counter() - t0
    return SolveResult(PhysMesh(x, y, grid.topology), len(history), wall, converged, history)
