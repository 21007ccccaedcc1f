"""Timing helpers shared by the ``bench`` subcommand and ``benchmarks/``."""
from __future__ import annotations

import time
from dataclasses import dataclass

from . import kernels
from .elliptic import SolverConfig, elliptic_solve
from .experiment import median_time
from .geometry import make_case
from .mesh import CompGrid
from .tfi import tfi_generate


@dataclass
class KernelTiming:
    backend: str
    resolution: tuple[int, int]
    sweeps: int
    seconds: float  # median over repeats

    @property
    def per_sweep(self) -> float:
        return self.seconds / self.sweeps


def time_sweeps(sweep, case, grid, sweeps: int, repeats: int = 5) -> float:
    """Median time of ``sweeps`` SOR sweeps started from the TFI mesh."""
    init = tfi_generate(case, grid)
    periodic = grid.topology == "O"

    def run():
        x, y = init.x.copy(), init.y.copy()
        for _ in range(sweeps):
            sweep(x, y, 1.3, periodic)

    return median_time(run, repeats)[0]


def bench_kernels(family="arch", param=0.5, resolution=(33, 33), sweeps=20, repeats=5) -> list[KernelTiming]:
    case = make_case(family, param)
    grid = CompGrid(resolution[0], resolution[1], case.topology)
    out = []
    compiled = kernels.compiled_sor_sweep()
    if compiled is not None:
        out.append(KernelTiming("cython", tuple(resolution), sweeps, time_sweeps(compiled, case, grid, sweeps, repeats)))
    out.append(
        KernelTiming("python", tuple(resolution), sweeps, time_sweeps(kernels.python_sor_sweep, case, grid, sweeps, repeats))
    )
    return out


def kernel_csv(rows: list[KernelTiming]) -> str:
    lines = ["backend,resolution,sweeps,median_s,per_sweep_s"]
    for r in rows:
        lines.append(f"{r.backend},{r.resolution[0]}x{r.resolution[1]},{r.sweeps},{r.seconds:.6g},{r.per_sweep:.6g}")
    return "\n".join(lines) + "\n"


def bench_methods(family, params, resolution, model=None, repeats=5) -> list[tuple[float, str, float]]:
    """(param, method, seconds) for TFI, elliptic and, given a model, inference.

    TFI and inference take the median of ``repeats`` after a warmup; the
    elliptic solve is timed once.
    """
    from .network import predict_mesh

    rows = []
    for p in params:
        case = make_case(family, p)
        grid = CompGrid(resolution[0], resolution[1], case.topology)
        rows.append((p, "tfi", median_time(lambda: tfi_generate(case, grid), repeats)[0]))
        t0 = time.perf_counter()
        elliptic_solve(case, grid, SolverConfig())
        rows.append((p, "elliptic", time.perf_counter() - t0))
        if model is not None:
            rows.append((p, "model", median_time(lambda: predict_mesh(model, case, grid), repeats)[0]))
    return rows
