"""Datasets of elliptic ground-truth meshes, train/test splits, training and evaluation."""
from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elliptic import SolverConfig, elliptic_solve
from .errors import ConfigError, ContractError, MeshFormatError, SolverError, TrainingDivergedError
from .geometry import GeometryCase, SensorTrace, make_case, sample_sensors
from .mesh import CompGrid, PhysMesh, count_inverted, quality_report, read_mesh, write_mesh
from .network import (
    BOUNDARY,
    INTERIOR,
    AdamState,
    BatchItem,
    MeshONetModel,
    adam_step,
    loss_and_gradients,
    predict_mesh,
)

log = logging.getLogger(__name__)

MANIFEST_HEADER = "MESHONET-DATASET 1"
TRACE_HEADER = "MESHONET-TRACE 1"


@dataclass
class Sample:
    param: float
    trace: SensorTrace
    target: PhysMesh
    case: GeometryCase

    @property
    def resolution(self) -> tuple[int, int]:
        return self.target.n_xi, self.target.n_eta


@dataclass
class Dataset:
    family: str
    resolution: tuple[int, int]
    sensor_layout: tuple[tuple[str, float], ...]
    solver: SolverConfig
    samples: list[Sample] = field(default_factory=list)

    def by_param(self, params) -> list[Sample]:
        out = []
        for p in params:
            match = [s for s in self.samples if s.param == float(p)]
            if not match:
                raise ContractError(f"param {p} not in dataset (have {[s.param for s in self.samples]})")
            out.append(match[0])
        return out

    @property
    def params(self) -> list[float]:
        return [s.param for s in self.samples]


def solver_hash(cfg: SolverConfig) -> str:
    return hashlib.sha256(cfg.key().encode()).hexdigest()[:16]


def _build_one(family, param, grid, layout, cfg):
    case = make_case(family, param)
    res = elliptic_solve(case, grid, cfg)
    if not res.converged:
        raise SolverError(
            f"{family} param {param}: elliptic solve did not converge in {res.iterations} sweeps "
            f"(last update {res.history[-1]:.3e})"
        )
    inv = count_inverted(res.mesh)
    if inv:
        raise SolverError(f"{family} param {param}: ground-truth mesh has {inv} inverted cells")
    trace = sample_sensors(case, len(layout), layout)
    return Sample(float(param), trace, res.mesh, case)


def build_dataset(
    family: str,
    params,
    resolution: tuple[int, int],
    sensor_layout,
    solver: SolverConfig | None = None,
    out_dir=None,
    jobs: int = 1,
) -> Dataset:
    """Solve the elliptic system for every param and pair the result with its sensor trace.

    Any rejected sample fails the whole build. With ``out_dir`` the samples and
    a manifest are written there.
    """
    solver = solver or SolverConfig()
    layout = tuple((str(s), float(t)) for s, t in sensor_layout)
    params = [float(p) for p in params]
    if len(set(params)) != len(params):
        raise ConfigError(f"duplicate params in {params}")
    topology = make_case(family, params[0]).topology if params else None
    samples: list[Sample] = []
    if params:
        grid = CompGrid(resolution[0], resolution[1], topology)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                futs = [ex.submit(_build_one, family, p, grid, layout, solver) for p in params]
                samples = [f.result() for f in futs]
        else:
            samples = [_build_one(family, p, grid, layout, solver) for p in params]
    for s in samples:
        log.info("dataset %s: param %g ready", family, s.param)
    ds = Dataset(family, tuple(resolution), layout, solver, samples)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


# ---------------------------------------------------------------- dataset files


def format_trace(trace: SensorTrace) -> str:
    lines = [TRACE_HEADER, str(trace.m)]
    for (side, t), a, b in zip(trace.sensor_params, trace.u1.tolist(), trace.u2.tolist()):
        lines.append(f"{side} {t:.17g} {a:.17g} {b:.17g}")
    return "\n".join(lines) + "\n"


def read_trace(path) -> SensorTrace:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise MeshFormatError(f"{path}:1: expected {TRACE_HEADER!r}")
    try:
        m = int(lines[1])
        rows = [ln.split() for ln in lines[2 : 2 + m]]
        layout = tuple((r[0], float(r[1])) for r in rows)
        u1 = np.array([float(r[2]) for r in rows])
        u2 = np.array([float(r[3]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise MeshFormatError(f"{path}: malformed trace file ({exc})") from None
    if len(rows) != m:
        raise MeshFormatError(f"{path}: expected {m} sensors, found {len(rows)}")
    return SensorTrace(m, u1, u2, layout)


def format_manifest(ds: Dataset) -> str:
    lines = [
        MANIFEST_HEADER,
        f"family {ds.family}",
        f"resolution {ds.resolution[0]} {ds.resolution[1]}",
        f"solver {ds.solver.key()}",
        f"solver_hash {solver_hash(ds.solver)}",
        f"sensors {len(ds.sensor_layout)}",
    ]
    lines.extend(f"sensor {side} {t:.17g}" for side, t in ds.sensor_layout)
    for k, s in enumerate(ds.samples):
        lines.append(f"param {s.param!r} trace trace_{k:03d}.txt target target_{k:03d}.mesh")
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(ds.samples):
        (out / f"trace_{k:03d}.txt").write_text(format_trace(s.trace))
        write_mesh(s.target, out / f"target_{k:03d}.mesh")
    path = out / "manifest.txt"
    path.write_text(format_manifest(ds))
    return path


def manifest_hash(path) -> str:
    """SHA-256 over the manifest and every file it references, in manifest order."""
    path = Path(path)
    h = hashlib.sha256(path.read_bytes())
    for line in path.read_text().splitlines():
        tok = line.split()
        if tok and tok[0] == "param":
            h.update((path.parent / tok[3]).read_bytes())
            h.update((path.parent / tok[5]).read_bytes())
    return h.hexdigest()


def _parse_solver_key(text: str) -> SolverConfig:
    kv = dict(part.split("=", 1) for part in text.split(";"))
    mi = kv["max_iters"]
    return SolverConfig(float(kv["omega"]), float(kv["tol"]), None if mi == "None" else int(mi))


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    lines = path.read_text().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise MeshFormatError(f"{path}:1: expected {MANIFEST_HEADER!r}")
    family = None
    resolution = None
    solver = SolverConfig()
    layout = []
    entries = []
    for no, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        key = tok[0]
        try:
            if key == "family":
                family = tok[1]
            elif key == "resolution":
                resolution = (int(tok[1]), int(tok[2]))
            elif key == "solver":
                solver = _parse_solver_key(tok[1])
            elif key == "sensor":
                layout.append((tok[1], float(tok[2])))
            elif key == "param":
                entries.append((float(tok[1]), tok[3], tok[5]))
            elif key not in ("solver_hash", "sensors"):
                raise MeshFormatError(f"{path}:{no}: unknown manifest key {key!r}")
        except (IndexError, ValueError, KeyError):
            raise MeshFormatError(f"{path}:{no}: malformed line {line!r}") from None
    samples = []
    for p, trace_file, target_file in entries:
        trace = read_trace(path.parent / trace_file)
        target = read_mesh(path.parent / target_file)
        samples.append(Sample(p, trace, target, make_case(family, p)))
    return Dataset(family, resolution, tuple(layout), solver, samples)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class Split:
    protocol: str
    train: tuple[float, ...]
    test: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(float(p) for p in self.train))
        object.__setattr__(self, "test", tuple(float(p) for p in self.test))
        self.validate()

    def validate(self) -> None:
        if self.protocol not in ("interpolation", "extrapolation", "leave-one-out"):
            raise ConfigError(f"unknown split protocol {self.protocol!r}")
        if not self.train:
            raise ConfigError("split has no training params")
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ConfigError(f"train and test params overlap: {sorted(overlap)}")
        lo, hi = min(self.train), max(self.train)
        if self.protocol == "interpolation":
            bad = [p for p in self.test if not (lo < p < hi)]
            if bad:
                raise ConfigError(f"interpolation test params {bad} not strictly inside [{lo}, {hi}]")
        elif self.protocol == "extrapolation":
            bad = [p for p in self.test if lo <= p <= hi]
            if bad:
                raise ConfigError(f"extrapolation test params {bad} not strictly outside [{lo}, {hi}]")
        elif len(self.test) != 1:
            raise ConfigError("leave-one-out holds out exactly one param")

    @property
    def all_params(self) -> list[float]:
        return sorted(set(self.train) | set(self.test))


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 100_000
    interior_batch: int = 256
    lr: float = 1e-3
    lr_schedule: str = "constant"  # or "step"
    lr_decay: float = 0.5
    lr_step: int = 10_000
    w_int: float = 1.0
    w_bnd: float = 1.0
    seed: int = 0
    eval_interval: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.interior_batch < 1:
            raise ConfigError("interior_batch must be >= 1")
        if self.lr_schedule not in ("constant", "step"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.eval_interval < 1 or self.lr_step < 1:
            raise ConfigError("eval_interval and lr_step must be >= 1")

    def lr_at(self, it: int) -> float:
        """Learning rate for 0-based iteration ``it``."""
        if self.lr_schedule == "step":
            return self.lr * self.lr_decay ** (it // self.lr_step)
        return self.lr


@dataclass
class TrainResult:
    model: MeshONetModel
    losses: np.ndarray  # batch loss at every iteration
    eval_interval: int = 100

    @property
    def history(self) -> list[tuple[int, float]]:
        """(iteration, loss) every ``eval_interval`` iterations, 1-based."""
        k = self.eval_interval
        return [(i, float(self.losses[i - 1])) for i in range(k, len(self.losses) + 1, k)]

    def history_csv(self) -> str:
        lines = ["iteration,loss"]
        lines.extend(f"{i},{v:.17g}" for i, v in self.history)
        return "\n".join(lines) + "\n"


@dataclass
class _Prepared:
    u1: np.ndarray
    u2: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray


def _prepare(sample: Sample) -> _Prepared:
    grid = sample.target.grid
    XI, ETA = grid.lattice()
    mask = grid.boundary_mask().ravel()
    idx = np.arange(mask.size)
    return _Prepared(
        sample.trace.u1,
        sample.trace.u2,
        XI.ravel(),
        ETA.ravel(),
        sample.target.x.ravel(),
        sample.target.y.ravel(),
        idx[~mask],
        idx[mask],
    )


def full_batch(sample: Sample) -> BatchItem:
    """Every lattice point of ``sample`` as one tagged batch item."""
    p = _prepare(sample)
    idx = np.concatenate([p.interior, p.boundary])
    tags = np.concatenate([np.full(p.interior.size, INTERIOR), np.full(p.boundary.size, BOUNDARY)])
    return BatchItem(p.u1, p.u2, p.xi[idx], p.eta[idx], p.x[idx], p.y[idx], tags)


def train_samples(model: MeshONetModel, samples: list[Sample], cfg: TrainConfig) -> TrainResult:
    """Adam on fresh random interior subsets plus all boundary points each iteration."""
    model = model.copy()
    if cfg.iterations == 0:
        return TrainResult(model, np.zeros(0), cfg.eval_interval)
    if not samples:
        raise ContractError("no training samples")
    prepared = [_prepare(s) for s in samples]
    for s, p in zip(samples, prepared):
        if s.trace.m != model.spec.m:
            raise ContractError(f"sample sensor count {s.trace.m} does not match model m={model.spec.m}")
        if cfg.interior_batch > p.interior.size:
            raise ConfigError(
                f"interior_batch={cfg.interior_batch} exceeds the {p.interior.size} interior points"
                f" of a {s.resolution[0]}x{s.resolution[1]} grid"
            )
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros(model.params.size)
    losses = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        batch = []
        for p in prepared:
            pick = rng.choice(p.interior, size=cfg.interior_batch, replace=False)
            idx = np.concatenate([pick, p.boundary])
            tags = np.concatenate([np.full(pick.size, INTERIOR), np.full(p.boundary.size, BOUNDARY)])
            batch.append(BatchItem(p.u1, p.u2, p.xi[idx], p.eta[idx], p.x[idx], p.y[idx], tags))
        loss, grad = loss_and_gradients(model, batch, cfg.w_int, cfg.w_bnd)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise TrainingDivergedError(it + 1, model)
        losses[it] = loss
        if (it + 1) % (cfg.eval_interval * 10) == 0:
            log.info("iteration %d: loss %.4e (lr %.2e)", it + 1, loss, cfg.lr_at(it))
        new_params, state = adam_step(model.params, grad, state, cfg.lr_at(it), cfg.beta1, cfg.beta2, cfg.eps)
        model = MeshONetModel(model.spec, new_params, model.seed, model.meta)
    model.meta["train"] = {
        "iterations": cfg.iterations,
        "params": [s.param for s in samples],
        "final_loss": float(losses[-1]),
    }
    return TrainResult(model, losses, cfg.eval_interval)


def train(model: MeshONetModel, dataset: Dataset, split: Split, cfg: TrainConfig) -> TrainResult:
    """Train on the split's training params only; test samples never enter a gradient."""
    split.validate()
    result = train_samples(model, dataset.by_param(split.train), cfg)
    result.model.meta.setdefault("sensor_layout", [list(x) for x in dataset.sensor_layout])
    result.model.meta.setdefault("family", dataset.family)
    return result


def full_loss(model: MeshONetModel, sample: Sample, w_int=1.0, w_bnd=1.0) -> float:
    return loss_and_gradients(model, [full_batch(sample)], w_int, w_bnd)[0]


# ---------------------------------------------------------------- evaluation


def relative_l2(pred: PhysMesh, target: PhysMesh) -> float:
    num = np.sum((pred.x - target.x) ** 2 + (pred.y - target.y) ** 2)
    den = np.sum(target.x**2 + target.y**2)
    return float(np.sqrt(num / den))


@dataclass
class EvalRow:
    param: float
    rel_l2: float
    mean_max_angle: float
    max_max_angle: float
    inverted_cells: int
    boundary_deviation: float
    target_mean_max_angle: float
    wall_time: float = field(default=0.0, compare=False)
    mesh: PhysMesh | None = field(default=None, repr=False, compare=False)


def evaluate(model: MeshONetModel, dataset: Dataset, params) -> list[EvalRow]:
    rows = []
    for s in dataset.by_param(params):
        t0 = time.perf_counter()
        pred = predict_mesh(model, s.case, s.target.grid, dataset.sensor_layout)
        wall = time.perf_counter() - t0
        q = quality_report(pred, s.case)
        rows.append(
            EvalRow(
                s.param,
                relative_l2(pred, s.target),
                q.mean,
                q.max,
                q.inverted_cells,
                q.boundary_deviation,
                quality_report(s.target).mean,
                wall,
                pred,
            )
        )
    return rows


def evaluation_csv(rows: list[EvalRow]) -> str:
    """Deterministic part of the evaluation (no wall times)."""
    lines = ["param,rel_l2,mean_max_angle,max_max_angle,inverted_cells,boundary_deviation,target_mean_max_angle"]
    for r in rows:
        lines.append(
            f"{r.param!r},{r.rel_l2:.17g},{r.mean_max_angle:.17g},{r.max_max_angle:.17g},"
            f"{r.inverted_cells},{r.boundary_deviation:.17g},{r.target_mean_max_angle:.17g}"
        )
    return "\n".join(lines) + "\n"


def timing_csv(rows: list[EvalRow]) -> str:
    lines = ["param,wall_time_s"]
    lines.extend(f"{r.param!r},{r.wall_time:.6g}" for r in rows)
    return "\n".join(lines) + "\n"


def coverage_failure_bound(n_interior: int, batch: int, iterations: int = 1000) -> float:
    """Union bound on P(some interior point is never drawn in ``iterations`` draws of ``batch``)."""
    miss = 1.0 - batch / n_interior
    return float(n_interior * miss**iterations) if miss > 0 else 0.0


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
