import math

import numpy as np
import pytest

from meshonet.elliptic import SolverConfig
from meshonet.errors import ConfigError, ContractError, MeshFormatError, TrainingDivergedError
from meshonet.geometry import default_sensor_layout
from meshonet.mesh import PhysMesh
from meshonet.network import ModelSpec, forward, init_model
from meshonet.training import (
    Dataset,
    Split,
    TrainConfig,
    build_dataset,
    coverage_failure_bound,
    evaluate,
    evaluation_csv,
    full_loss,
    load_dataset,
    manifest_hash,
    relative_l2,
    train,
    train_samples,
    write_dataset,
)

LAYOUT = default_sensor_layout("H", 16)
SMALL = ModelSpec(m=16, k=8, q=2, branch_hidden=(16,), trunk_hidden=(16, 16))


@pytest.fixture(scope="module")
def arch_ds():
    return build_dataset("arch", [0.1, 0.5, 0.9], (9, 9), LAYOUT)


def test_empty_param_list():
    ds = build_dataset("arch", [], (9, 9), LAYOUT)
    assert ds.samples == []


def test_one_param_one_pair(arch_ds):
    ds = build_dataset("arch", [0.5], (9, 9), LAYOUT)
    assert len(ds.samples) == 1
    s = ds.samples[0]
    assert s.trace.m == 16 and s.resolution == (9, 9)


def test_duplicate_params_rejected():
    with pytest.raises(ConfigError):
        build_dataset("arch", [0.5, 0.5], (9, 9), LAYOUT)


def test_parallel_build_matches_serial(arch_ds):
    par = build_dataset("arch", [0.1, 0.5, 0.9], (9, 9), LAYOUT, jobs=3)
    for a, b in zip(arch_ds.samples, par.samples):
        assert a.param == b.param and a.target == b.target


def test_manifest_round_trip_and_hash(tmp_path, arch_ds):
    write_dataset(arch_ds, tmp_path / "a")
    again = build_dataset("arch", [0.1, 0.5, 0.9], (9, 9), LAYOUT, out_dir=tmp_path / "b")
    assert manifest_hash(tmp_path / "a" / "manifest.txt") == manifest_hash(tmp_path / "b" / "manifest.txt")
    back = load_dataset(tmp_path / "a")
    assert back.family == "arch" and back.resolution == (9, 9)
    assert back.sensor_layout == arch_ds.sensor_layout
    for a, b in zip(arch_ds.samples, back.samples):
        assert a.param == b.param and a.target == b.target
        assert a.trace.u1.tobytes() == b.trace.u1.tobytes()
    text = (tmp_path / "a" / "manifest.txt").read_text()
    assert "param 0.5 trace trace_001.txt target target_001.mesh" in text
    assert "solver_hash" in text


def test_manifest_hash_changes_with_solver(tmp_path):
    build_dataset("arch", [0.5], (9, 9), LAYOUT, out_dir=tmp_path / "a")
    build_dataset("arch", [0.5], (9, 9), LAYOUT, SolverConfig(tol=1e-6), out_dir=tmp_path / "b")
    assert manifest_hash(tmp_path / "a" / "manifest.txt") != manifest_hash(tmp_path / "b" / "manifest.txt")


def test_bad_manifest(tmp_path):
    (tmp_path / "manifest.txt").write_text("nope\n")
    with pytest.raises(MeshFormatError):
        load_dataset(tmp_path)


def test_split_validation():
    Split("interpolation", (0.1, 0.9), (0.5,))
    Split("extrapolation", (0.1, 0.3), (0.7,))
    Split("leave-one-out", (0.1, 0.3, 0.5), (0.7,))
    with pytest.raises(ConfigError):
        Split("interpolation", (0.1, 0.9), (0.9,))
    with pytest.raises(ConfigError):
        Split("interpolation", (0.1, 0.3), (0.7,))
    with pytest.raises(ConfigError):
        Split("extrapolation", (0.1, 0.9), (0.5,))
    with pytest.raises(ConfigError):
        Split("random", (0.1,), (0.2,))
    with pytest.raises(ConfigError):
        Split("interpolation", (), (0.5,))


def test_zero_iterations_returns_init(arch_ds):
    model = init_model(SMALL, 3)
    res = train(model, arch_ds, Split("interpolation", (0.1, 0.9), (0.5,)), TrainConfig(iterations=0))
    assert res.model.params.tobytes() == model.params.tobytes()
    assert res.history_csv() == "iteration,loss\n"


def test_training_deterministic(arch_ds):
    cfg = TrainConfig(iterations=60, interior_batch=20, eval_interval=10, seed=5)
    split = Split("interpolation", (0.1, 0.9), (0.5,))
    a = train(init_model(SMALL, 1), arch_ds, split, cfg)
    b = train(init_model(SMALL, 1), arch_ds, split, cfg)
    assert a.history_csv() == b.history_csv()
    assert a.model.params.tobytes() == b.model.params.tobytes()
    assert len(a.history) == 6
    c = train(init_model(SMALL, 1), arch_ds, split, TrainConfig(iterations=60, interior_batch=20, seed=6))
    assert c.model.params.tobytes() != a.model.params.tobytes()


def test_corrupted_test_targets_do_not_change_training(arch_ds):
    split = Split("interpolation", (0.1, 0.9), (0.5,))
    cfg = TrainConfig(iterations=40, interior_batch=20)
    clean = train(init_model(SMALL, 1), arch_ds, split, cfg)
    bad = Dataset(arch_ds.family, arch_ds.resolution, arch_ds.sensor_layout, arch_ds.solver, [])
    for s in arch_ds.samples:
        s2 = type(s)(s.param, s.trace, s.target, s.case)
        if s.param == 0.5:
            rng = np.random.default_rng(0)
            s2 = type(s)(s.param, type(s.trace)(s.trace.m, rng.normal(size=16), rng.normal(size=16),
                                                s.trace.sensor_params),
                         PhysMesh(np.full_like(s.target.x, np.nan), s.target.y), s.case)
        bad.samples.append(s2)
    dirty = train(init_model(SMALL, 1), bad, split, cfg)
    assert clean.model.params.tobytes() == dirty.model.params.tobytes()


def test_training_reduces_loss(arch_ds):
    samples = arch_ds.by_param([0.5])
    model = init_model(SMALL, 0)
    before = full_loss(model, samples[0])
    res = train_samples(model, samples, TrainConfig(iterations=300, interior_batch=49, lr=3e-3))
    assert full_loss(res.model, samples[0]) < before / 10
    assert res.model.meta["train"]["iterations"] == 300


def test_nan_aborts_with_iteration(arch_ds):
    model = init_model(SMALL, 0)
    with pytest.raises(TrainingDivergedError) as info:
        train_samples(model, arch_ds.samples[:1], TrainConfig(iterations=50, interior_batch=10, lr=1e300))
    assert info.value.iteration >= 1
    assert np.isfinite(info.value.last_good.params).all()


def test_batch_larger_than_interior_rejected(arch_ds):
    with pytest.raises(ConfigError):
        train_samples(init_model(SMALL, 0), arch_ds.samples[:1], TrainConfig(iterations=1, interior_batch=50))


def test_sensor_count_mismatch(arch_ds):
    with pytest.raises(ContractError):
        train_samples(init_model(ModelSpec(m=32, k=4, q=1, branch_hidden=(4,), trunk_hidden=(4,)), 0),
                      arch_ds.samples[:1], TrainConfig(iterations=1, interior_batch=5))


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-2, lr_schedule="step", lr_step=100, lr_decay=0.5)
    assert cfg.lr_at(0) == 1e-2 and cfg.lr_at(99) == 1e-2 and cfg.lr_at(100) == 5e-3 and cfg.lr_at(250) == 2.5e-3
    assert TrainConfig(lr=1e-3).lr_at(10**6) == 1e-3
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="cosine")


def test_relative_l2_examples(uniform):
    m = uniform(5, 5)
    assert relative_l2(m, m) == 0.0
    zero = PhysMesh(np.zeros_like(m.x), np.zeros_like(m.y))
    assert relative_l2(zero, m) == 1.0


def test_evaluate_perfect_prediction(arch_ds):
    """A model whose output is a known mesh gives rel L2 equal to the oracle ratio."""
    model = init_model(SMALL, 0)
    rows = evaluate(model, arch_ds, [0.5])
    s = arch_ds.by_param([0.5])[0]
    XI, ETA = s.target.grid.lattice()
    px, py = forward(model, s.trace.u1, s.trace.u2, XI, ETA)
    expect = math.sqrt(np.sum((px - s.target.x) ** 2 + (py - s.target.y) ** 2) / np.sum(s.target.x**2 + s.target.y**2))
    assert rows[0].rel_l2 == pytest.approx(expect, rel=1e-12)
    csv = evaluation_csv(rows)
    assert csv.splitlines()[0].startswith("param,rel_l2")
    assert evaluation_csv(evaluate(model, arch_ds, [0.5])) == csv


def coverage_exact(n, b, iters):
    # inclusion-exclusion over the set of never-drawn points
    total = 0.0
    for j in range(1, n + 1):
        if n - j < b:
            break
        p = math.comb(n - j, b) / math.comb(n, b)
        total += (-1) ** (j + 1) * math.comb(n, j) * p**iters
    return total


def test_coverage_bound_matches_exact_small_case():
    n, b, iters = 12, 4, 40
    exact = coverage_exact(n, b, iters)
    bound = coverage_failure_bound(n, b, iters)
    assert exact <= bound <= exact * 1.1


@pytest.mark.parametrize("n_int,batch", [(31 * 31, 256), (15 * 15, 128)])
def test_default_batches_cover_grid(n_int, batch):
    assert coverage_failure_bound(n_int, batch, 1000) <= 1e-6
