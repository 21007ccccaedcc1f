"""End-to-end experiment runs and the refinement timing table."""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .elliptic import SolverConfig, elliptic_solve
from .errors import ConfigError, MeshONetError
from .geometry import GeometryCase, default_sensor_layout, make_case
from .mesh import CompGrid, count_inverted, parse_resolution, quality_report, write_mesh
from .network import MeshONetModel, init_model, predict_mesh, save_checkpoint
from .tfi import tfi_generate
from .training import build_dataset, evaluate, evaluation_csv, timing_csv, train

log = logging.getLogger(__name__)

# elliptic cost grows like (points)^2: sweeps ~ n^2, work per sweep ~ n^2
ELLIPTIC_COST_EXPONENT = 2.0
PROBE_RESOLUTION = (33, 33)


def median_time(fn, repeats: int = 5, warmup: int = 1):
    """Median wall time of ``repeats`` calls after ``warmup`` untimed calls; returns (seconds, last result)."""
    out = None
    for _ in range(warmup):
        out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def check_checkpoint(model: MeshONetModel, family: str) -> None:
    """Reject a checkpoint whose sensor layout does not fit ``family``."""
    layout = model.meta.get("sensor_layout")
    if layout is None:
        raise ConfigError("checkpoint carries no sensor layout")
    trained = model.meta.get("family")
    if trained is not None and trained != family:
        raise ConfigError(f"checkpoint was trained on family {trained!r}, not {family!r}")
    case = make_case(family, _mid(family))
    expected = default_sensor_layout(case.topology, model.spec.m)
    got = tuple((str(s), float(t)) for s, t in layout)
    if got != expected:
        raise ConfigError(f"checkpoint sensor layout does not match the {family} layout with m={model.spec.m}")


def _mid(family):
    from .geometry import FAMILY_RANGES

    lo, hi = FAMILY_RANGES[family]
    return 0.5 * (lo + hi)


@dataclass
class RefineRow:
    resolution: tuple[int, int]
    model_time: float
    tfi_time: float
    elliptic_time: float | None
    model_inverted: int
    tfi_inverted: int
    elliptic_inverted: int | None
    model_mean_angle: float
    tfi_mean_angle: float
    elliptic_mean_angle: float | None
    elliptic_predicted: float | None = None  # predicted time when skipped

    @property
    def points(self) -> int:
        return self.resolution[0] * self.resolution[1]

    @property
    def speedup(self) -> float | None:
        if self.elliptic_time is None or self.model_time <= 0:
            return None
        return self.elliptic_time / self.model_time


REFINE_HEADER = (
    "resolution,points,model_s,tfi_s,elliptic_s,speedup,model_inverted,tfi_inverted,elliptic_inverted,"
    "model_mean_max_angle,tfi_mean_max_angle,elliptic_mean_max_angle"
)


def refine_csv(rows: list[RefineRow]) -> str:
    def opt(v, fmt):
        return "-" if v is None else format(v, fmt)

    lines = [REFINE_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    f"{r.resolution[0]}x{r.resolution[1]}",
                    str(r.points),
                    f"{r.model_time:.6g}",
                    f"{r.tfi_time:.6g}",
                    opt(r.elliptic_time, ".6g"),
                    opt(r.speedup, ".6g"),
                    str(r.model_inverted),
                    str(r.tfi_inverted),
                    opt(r.elliptic_inverted, "d"),
                    f"{r.model_mean_angle:.6f}",
                    f"{r.tfi_mean_angle:.6f}",
                    opt(r.elliptic_mean_angle, ".6f"),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def refine(
    model: MeshONetModel,
    case: GeometryCase,
    resolutions,
    solver: SolverConfig | None = None,
    elliptic_cutoff: float = 600.0,
    repeats: int = 5,
) -> list[RefineRow]:
    """Model, TFI and elliptic meshes at each resolution, with timings.

    Model and TFI times are medians of ``repeats`` runs after one warmup; the
    elliptic solve runs once. An elliptic solve whose predicted time exceeds
    ``elliptic_cutoff`` seconds is skipped. The prediction extrapolates the
    most recent measured solve (or a 33x33 probe) with cost ~ points^2.
    """
    solver = solver or SolverConfig()
    rows = []
    ref = None  # (points, seconds) of the last measured elliptic solve
    for res in resolutions:
        shape = parse_resolution(res) if isinstance(res, str) else tuple(res)
        grid = CompGrid(shape[0], shape[1], case.topology)
        t_model, pred = median_time(lambda: predict_mesh(model, case, grid), repeats)
        t_tfi, tfi = median_time(lambda: tfi_generate(case, grid), repeats)
        if ref is None:
            probe = CompGrid(*PROBE_RESOLUTION, case.topology)
            t0 = time.perf_counter()
            elliptic_solve(case, probe, solver)
            ref = (probe.n_xi * probe.n_eta, time.perf_counter() - t0)
        points = shape[0] * shape[1]
        predicted = ref[1] * (points / ref[0]) ** ELLIPTIC_COST_EXPONENT
        e_time = e_inv = e_angle = None
        skipped = None
        if predicted <= elliptic_cutoff:
            t0 = time.perf_counter()
            sol = elliptic_solve(case, grid, solver)
            e_time = time.perf_counter() - t0
            e_inv = count_inverted(sol.mesh)
            e_angle = quality_report(sol.mesh).mean
            ref = (points, e_time)
        else:
            skipped = predicted
            log.info("elliptic at %dx%d skipped (predicted %.0f s)", shape[0], shape[1], predicted)
        rows.append(
            RefineRow(
                shape,
                t_model,
                t_tfi,
                e_time,
                count_inverted(pred),
                count_inverted(tfi),
                e_inv,
                quality_report(pred).mean,
                quality_report(tfi).mean,
                e_angle,
                skipped,
            )
        )
    return rows


# ---------------------------------------------------------------- full experiment


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, typ, exc, tb):
        if isinstance(exc, MeshONetError) and not getattr(exc, "_staged", False):
            exc.args = (f"stage {self.name!r} failed: {exc}",)
            exc._staged = True
        elif exc is None:
            log.info("stage %s done in %.2f s", self.name, time.perf_counter() - self.t0)
        return False


def _fmt_param(p: float) -> str:
    return repr(float(p))


def quality_csv(rows) -> str:
    lines = ["param,split,method,mean_max_angle,max_max_angle,inverted_cells"]
    for param, split, method, rep in rows:
        lines.append(f"{_fmt_param(param)},{split},{method},{rep.mean:.17g},{rep.max:.17g},{rep.inverted_cells}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out_dir=None, refine_stage: bool = True) -> Path:
    """Dataset, training, evaluation and refinement; every artifact lands in ``out_dir``.

    Re-running with the same config rewrites every deterministic artifact
    byte for byte. Wall times live only in ``timing.csv`` and ``refine.csv``.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    split = cfg.split()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.format())

    with _Stage("dataset"):
        ds = build_dataset(
            cfg.family, split.all_params, cfg.grid_shape, cfg.sensor_layout(), cfg.solver(),
            out_dir=out / "dataset", jobs=cfg.jobs,
        )
    with _Stage("train"):
        result = train(init_model(cfg.model_spec(), cfg.seed), ds, split, cfg.train_config())
        model = result.model
        save_checkpoint(model, out / "model.ckpt")
        (out / "loss_history.csv").write_text(result.history_csv())
    with _Stage("evaluate"):
        params = list(split.train) + list(split.test)
        rows = evaluate(model, ds, params)
        (out / "evaluation.csv").write_text(evaluation_csv(rows))
        (out / "timing.csv").write_text(timing_csv(rows))
        meshes = out / "meshes"
        meshes.mkdir(exist_ok=True)
        qrows = []
        test = set(split.test)
        for r, s in zip(rows, ds.by_param(params)):
            tag = "test" if r.param in test else "train"
            tfi = tfi_generate(s.case, s.target.grid)
            write_mesh(r.mesh, meshes / f"{tag}_{_fmt_param(r.param)}_model.mesh")
            write_mesh(tfi, meshes / f"{tag}_{_fmt_param(r.param)}_tfi.mesh")
            for method, mesh in (("model", r.mesh), ("elliptic", s.target), ("tfi", tfi)):
                qrows.append((r.param, tag, method, quality_report(mesh, s.case)))
        (out / "quality.csv").write_text(quality_csv(qrows))
    if refine_stage and cfg.refine_resolutions:
        with _Stage("refine"):
            case = make_case(cfg.family, split.test[0] if split.test else split.train[0])
            rrows = refine(model, case, cfg.refine_resolutions, cfg.solver(), cfg.elliptic_cutoff)
            (out / "refine.csv").write_text(refine_csv(rrows))
    return out
