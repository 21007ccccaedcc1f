"""Command-line entry point.

Exit codes
----------
0  success
1  unexpected internal error
2  usage, config, contract or file-format error
3  geometry / domain error (bad family parameter, inconsistent boundary)
4  elliptic solver did not converge
5  numeric failure (NaN in a sweep or in training)
6  mesh produced but invalid (inverted cells)
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidMeshError, MeshONetError, SolverError

log = logging.getLogger("meshonet")

METHODS = ("tfi", "elliptic", "model")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _resolution(text: str) -> tuple[int, int]:
    from .mesh import parse_resolution

    try:
        return parse_resolution(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _base_config(args):
    from .config import ExperimentConfig, load_config

    return load_config(args.config) if args.config else ExperimentConfig()


def _emit(text: str, path=None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(p: float) -> str:
    return repr(float(p))


# ---------------------------------------------------------------- subcommands


def cmd_geometry(args) -> int:
    from .geometry import make_case

    case = make_case(args.family, args.param)
    t = np.arange(args.n + 1) / args.n
    sep = "," if args.csv else " "
    lines = [sep.join(("side", "t", "x", "y"))]
    for curve in case.curves:
        x, y = curve.eval(t)
        for ti, xi, yi in zip(t, np.broadcast_to(x, t.shape), np.broadcast_to(y, t.shape)):
            lines.append(sep.join((curve.side, f"{ti:.17g}", f"{xi:.17g}", f"{yi:.17g}")))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _load_model_for(path, family):
    from .experiment import check_checkpoint
    from .network import load_checkpoint

    model = load_checkpoint(path)
    check_checkpoint(model, family)
    return model


def _report(rep, wall, args) -> None:
    if args.csv:
        rows = rep.summary_rows() + [("wall_time_s", f"{wall:.6g}")]
        sys.stdout.write("metric,value\n" + "".join(f"{k},{v}\n" for k, v in rows))
    else:
        print(rep.format_text())
        print(f"wall_time_s  {wall:.6g}")


def cmd_generate(args, parser) -> int:
    from .elliptic import SolverConfig, elliptic_solve
    from .geometry import make_case
    from .mesh import CompGrid, quality_report, write_mesh
    from .network import predict_mesh
    from .tfi import tfi_generate

    method = args.method_opt or args.method or "elliptic"
    if method not in METHODS:
        parser.error(f"method must be one of {', '.join(METHODS)}")
    shape = args.resolution_opt or args.resolution or (33, 33)
    if method == "model" and not args.checkpoint:
        parser.error("method 'model' requires --checkpoint")
    case = make_case(args.family, args.param)
    grid = CompGrid(shape[0], shape[1], case.topology)
    model = _load_model_for(args.checkpoint, args.family) if method == "model" else None
    t0 = time.perf_counter()
    if method == "tfi":
        mesh = tfi_generate(case, grid)
    elif method == "model":
        mesh = predict_mesh(model, case, grid)
    else:
        res = elliptic_solve(case, grid, SolverConfig(args.omega, args.tol, args.max_iters))
        mesh = res.mesh
        if args.log:
            Path(args.log).write_text(res.history_csv())
        if not res.converged:
            write_mesh(mesh, args.out or _default_mesh_name(args, method, shape))
            raise SolverError(f"elliptic solve did not converge in {res.iterations} sweeps")
        log.info("elliptic converged in %d sweeps", res.iterations)
    wall = time.perf_counter() - t0
    out = args.out or _default_mesh_name(args, method, shape)
    write_mesh(mesh, out)
    rep = quality_report(mesh, case)
    _report(rep, wall, args)
    if not rep.valid:
        raise InvalidMeshError(f"{rep.inverted_cells} inverted cells (mesh written to {out})")
    return 0


def _default_mesh_name(args, method, shape):
    return f"{args.family}_{_fmt(args.param)}_{method}_{shape[0]}x{shape[1]}.mesh"


def cmd_dataset(args) -> int:
    from .elliptic import SolverConfig
    from .geometry import default_sensor_layout, family_topology
    from .training import build_dataset, manifest_hash

    cfg = _base_config(args)
    family = args.family or cfg.family
    params = args.params if args.params is not None else sorted(set(cfg.train_params) | set(cfg.test_params))
    shape = args.resolution or cfg.grid_shape
    sensors = args.sensors or cfg.sensors
    layout = default_sensor_layout(family_topology(family), sensors)
    solver = SolverConfig(cfg.omega, cfg.tol, cfg.max_iters or None)
    build_dataset(family, params, shape, layout, solver, out_dir=args.out, jobs=args.jobs or cfg.jobs)
    print(f"manifest {Path(args.out) / 'manifest.txt'}")
    print(f"sha256 {manifest_hash(Path(args.out) / 'manifest.txt')}")
    return 0


def cmd_train(args) -> int:
    from .network import init_model, save_checkpoint
    from .training import Split, load_dataset, train

    cfg = _base_config(args)
    over = {}
    for key in ("iterations", "interior_batch", "lr"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.train_params is not None:
        over["train_params"] = tuple(args.train_params)
    if args.test_params is not None:
        over["test_params"] = tuple(args.test_params)
    if args.protocol:
        over["protocol"] = args.protocol
    if args.seed is not None:
        over["seed"] = args.seed
    ds = load_dataset(args.dataset)
    over["family"] = ds.family
    over["sensors"] = len(ds.sensor_layout)
    cfg = cfg.with_overrides(**over)
    split = Split(cfg.protocol, cfg.train_params, cfg.test_params)
    t0 = time.perf_counter()
    result = train(init_model(cfg.model_spec(), cfg.seed), ds, split, cfg.train_config())
    save_checkpoint(result.model, args.out)
    if args.history:
        Path(args.history).write_text(result.history_csv())
    final = float(result.losses[-1]) if len(result.losses) else float("nan")
    print(f"checkpoint {args.out}")
    print(f"iterations {cfg.iterations}  final_loss {final:.6e}  wall_time_s {time.perf_counter() - t0:.3f}")
    return 0


def cmd_infer(args) -> int:
    from .geometry import make_case
    from .mesh import CompGrid, quality_report, write_mesh
    from .network import predict_mesh

    model = _load_model_for(args.checkpoint, args.family)
    case = make_case(args.family, args.param)
    grid = CompGrid(args.resolution[0], args.resolution[1], case.topology)
    t0 = time.perf_counter()
    mesh = predict_mesh(model, case, grid)
    wall = time.perf_counter() - t0
    out = args.out or f"{args.family}_{_fmt(args.param)}_model_{args.resolution[0]}x{args.resolution[1]}.mesh"
    write_mesh(mesh, out)
    rep = quality_report(mesh, case)
    _report(rep, wall, args)
    if not rep.valid:
        raise InvalidMeshError(f"{rep.inverted_cells} inverted cells (mesh written to {out})")
    return 0


def cmd_refine(args) -> int:
    from .elliptic import SolverConfig
    from .experiment import refine, refine_csv
    from .geometry import make_case

    model = _load_model_for(args.checkpoint, args.family)
    case = make_case(args.family, args.param)
    rows = refine(model, case, args.resolutions, SolverConfig(), args.elliptic_cutoff, args.repeats)
    _emit(refine_csv(rows), args.out)
    return 0


def cmd_quality(args) -> int:
    from .geometry import make_case
    from .mesh import quality_report, read_mesh

    mesh = read_mesh(args.mesh)
    case = None
    if args.family is not None:
        if args.param is None:
            raise ConfigError("--family needs --param")
        case = make_case(args.family, args.param)
    rep = quality_report(mesh, case)
    if args.csv:
        sys.stdout.write("metric,value\n" + "".join(f"{k},{v}\n" for k, v in rep.summary_rows()))
    else:
        print(rep.format_text())
    return 0 if rep.valid else InvalidMeshError.exit_code


def cmd_run(args) -> int:
    from .experiment import run_experiment

    path = args.config_file or args.config
    if not path:
        raise ConfigError("run needs a config file")
    from .config import load_config

    cfg = load_config(path)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.jobs is not None:
        over["jobs"] = args.jobs
    cfg = cfg.with_overrides(**over)
    out = run_experiment(cfg, args.out, refine_stage=not args.no_refine)
    print(f"artifacts {out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_kernels, bench_methods, kernel_csv

    if args.what == "kernels":
        rows = bench_kernels(args.family, args.param, args.resolution, args.sweeps, args.repeats)
        _emit(kernel_csv(rows), args.out)
        return 0
    model = _load_model_for(args.checkpoint, args.family) if args.checkpoint else None
    params = args.params or [args.param]
    rows = bench_methods(args.family, params, args.resolution, model, args.repeats)
    _emit("param,method,seconds\n" + "".join(f"{_fmt(p)},{m},{s:.6g}\n" for p, m, s in rows), args.out)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    def common_flags(suppress):
        # flags accepted both before and after the subcommand; the copy on
        # each subparser must not overwrite a value given before it
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--seed", type=int, default=d(None), help="random seed (overrides the config)")
        c.add_argument("--config", default=d(None), help="experiment config file (key = value)")
        c.add_argument("--csv", action="store_true", default=d(False), help="machine-readable CSV output")
        c.add_argument("--jobs", type=int, default=d(None), help="parallel dataset solves")
        c.add_argument("-v", "--verbose", action="count", default=d(0))
        return c

    common = common_flags(True)

    ap = argparse.ArgumentParser(
        prog="meshonet",
        description="Structured mesh generation: TFI, elliptic smoothing and a learned boundary-to-mesh operator.",
        epilog=__doc__.split("Exit codes", 1)[1].replace("----------", "exit codes:"),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common_flags(False)],
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", parents=[common], help="dump the boundary curves of a geometry")
    p.add_argument("family")
    p.add_argument("param", type=float)
    p.add_argument("-n", type=int, default=64, help="intervals per curve")
    p.add_argument("--out")

    p = sub.add_parser("generate", parents=[common], help="generate a mesh by TFI, elliptic solve or trained model")
    p.add_argument("family")
    p.add_argument("param", type=float)
    p.add_argument("method", nargs="?", choices=METHODS)
    p.add_argument("resolution", nargs="?", type=_resolution)
    p.add_argument("--method", dest="method_opt", choices=METHODS)
    p.add_argument("--resolution", dest="resolution_opt", type=_resolution)
    p.add_argument("--omega", type=float, default=1.3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--checkpoint")
    p.add_argument("--log", help="write the elliptic convergence history (CSV) here")
    p.add_argument("--out", help="mesh file (default: <family>_<param>_<method>_<NxM>.mesh)")

    p = sub.add_parser("dataset", parents=[common], help="build an elliptic ground-truth dataset")
    p.add_argument("family", nargs="?")
    p.add_argument("--params", type=_floats)
    p.add_argument("--resolution", type=_resolution)
    p.add_argument("--sensors", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("dataset")
    p.add_argument("--train", dest="train_params", type=_floats)
    p.add_argument("--test", dest="test_params", type=_floats)
    p.add_argument("--protocol", choices=("interpolation", "extrapolation", "leave-one-out"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--interior-batch", dest="interior_batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--history", help="loss history CSV")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("infer", parents=[common], help="predict a mesh with a trained model")
    p.add_argument("checkpoint")
    p.add_argument("family")
    p.add_argument("param", type=float)
    p.add_argument("resolution", type=_resolution)
    p.add_argument("--out")

    p = sub.add_parser("refine", parents=[common], help="model vs TFI vs elliptic across resolutions (CSV)")
    p.add_argument("checkpoint")
    p.add_argument("family")
    p.add_argument("param", type=float)
    p.add_argument("resolutions", nargs="+", type=_resolution)
    p.add_argument("--elliptic-cutoff", type=float, default=600.0, help="seconds; skip slower predicted solves")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out")

    p = sub.add_parser("quality", parents=[common], help="quality report of a mesh file")
    p.add_argument("mesh")
    p.add_argument("--family")
    p.add_argument("--param", type=float)

    p = sub.add_parser("run", parents=[common], help="run an experiment config end to end")
    p.add_argument("config_file", nargs="?")
    p.add_argument("--out", help="artifacts directory (default: output_dir from the config)")
    p.add_argument("--no-refine", action="store_true")

    p = sub.add_parser("bench", parents=[common], help="timing benchmarks")
    p.add_argument("what", nargs="?", choices=("kernels", "methods"), default="kernels")
    p.add_argument("--family", default="arch")
    p.add_argument("--param", type=float, default=0.5)
    p.add_argument("--params", type=_floats)
    p.add_argument("--resolution", type=_resolution, default=(33, 33))
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    handlers = {
        "geometry": cmd_geometry,
        "dataset": cmd_dataset,
        "train": cmd_train,
        "infer": cmd_infer,
        "refine": cmd_refine,
        "quality": cmd_quality,
        "run": cmd_run,
        "bench": cmd_bench,
    }
    try:
        if args.command == "generate":
            return cmd_generate(args, parser)
        return handlers[args.command](args)
    except MeshONetError as exc:
        print(f"meshonet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"meshonet: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
