import math
import time

import numpy as np
import pytest

from meshonet.errors import ContractError, MeshFormatError, NumericError
from meshonet.network import (
    BOUNDARY,
    INTERIOR,
    AdamState,
    BatchItem,
    LiftConfig,
    MLPSpec,
    ModelSpec,
    adam_step,
    forward,
    init_model,
    lift,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
)

TINY = ModelSpec(m=8, k=4, q=2, branch_hidden=(6,), trunk_hidden=(5, 5))


def test_lift_values():
    assert lift(0.0, 0.0, 2).tolist() == [0, 1, 0, 1, 0, 0, 0, 0]
    assert lift(1.0, 0.0, 1).tolist() == [math.sin(1), math.cos(1), 0, 1, 1, 0]
    assert lift(0.3, 0.7, 3).shape == (10,)
    v = lift(0.5, 2.0, 3)
    assert v[4:].tolist() == [0.5, 2.0, 0.25, 4.0, 0.125, 8.0]


def test_lift_config():
    assert LiftConfig(3).dim == 10
    with pytest.raises(ContractError):
        LiftConfig(0)


def test_mlp_spec_validation():
    assert MLPSpec((3, 4, 2)).n_params == 3 * 4 + 4 + 4 * 2 + 2
    with pytest.raises(ContractError):
        MLPSpec((3, 2))
    with pytest.raises(ContractError):
        MLPSpec((3, 0, 2))


def test_param_count_is_function_of_spec():
    spec = ModelSpec()
    branch = 128 * 128 + 128 + 128 * 128 + 128 + 128 * 100 + 100
    trunk = 14 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 100 + 100
    assert spec.n_params == 2 * branch + trunk + 2
    assert init_model(spec, 1).params.size == spec.n_params


def decode(model):
    """Independent reading of the documented flat layout."""
    flat = model.params
    pos = 0

    def take_mlp(widths):
        nonlocal pos
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            W = flat[pos : pos + a * b].reshape(a, b)
            pos += a * b
            layers.append((W, flat[pos : pos + b]))
            pos += b
        return layers

    s = model.spec
    bw = [s.m, *s.branch_hidden, s.k]
    tw = [4 + 2 * s.q, *s.trunk_hidden, s.k]
    bx, by, tr = take_mlp(bw), take_mlp(bw), take_mlp(tw)
    return bx, by, tr, flat[pos], flat[pos + 1]


def oracle_forward(model, u1, u2, xi, eta):
    bx_l, by_l, tr_l, b0, b0y = decode(model)

    def run(layers, v):
        for li, (W, b) in enumerate(layers):
            v = [sum(v[i] * W[i, j] for i in range(len(v))) + b[j] for j in range(W.shape[1])]
            if li < len(layers) - 1:
                v = [math.tanh(a) for a in v]
        return v

    q = model.spec.q
    feat = [math.sin(xi), math.cos(xi), math.sin(eta), math.cos(eta)]
    for p in range(1, q + 1):
        feat += [xi**p, eta**p]
    t = run(tr_l, feat)
    bx = run(bx_l, list(u1))
    by = run(by_l, list(u2))
    return sum(a * b for a, b in zip(bx, t)) + b0, sum(a * b for a, b in zip(by, t)) + b0y


def test_forward_matches_oracle():
    rng = np.random.default_rng(0)
    model = init_model(TINY, 3)
    model.params[-2:] = [0.3, -0.1]
    u1, u2 = rng.normal(size=8), rng.normal(size=8)
    x, y = forward(model, u1, u2, np.array([0.3]), np.array([0.8]))
    ox, oy = oracle_forward(model, u1, u2, 0.3, 0.8)
    assert x[0] == pytest.approx(ox, abs=1e-13) and y[0] == pytest.approx(oy, abs=1e-13)


def test_forward_bias_only():
    model = init_model(TINY, 0)
    bx, by, _, _, _ = decode(model)
    bx[-1][0][...] = 0
    bx[-1][1][...] = 0
    by[-1][0][...] = 0
    by[-1][1][...] = 0
    model.params[-2:] = [0.3, -0.2]
    x, y = forward(model, np.ones(8), np.ones(8), np.linspace(0, 1, 5), np.linspace(1, 0, 5))
    assert np.all(x == 0.3) and np.all(y == -0.2)


def test_forward_dot_product_degenerate_case():
    # k = 1, branch output fixed at 1 via its last bias, so x equals the trunk output
    spec = ModelSpec(m=8, k=1, q=1, branch_hidden=(3,), trunk_hidden=(4,))
    model = init_model(spec, 5)
    bx, by, tr, _, _ = decode(model)
    bx[-1][0][...] = 0
    bx[-1][1][...] = 1.0
    xi, eta = np.array([0.2, 0.9]), np.array([0.4, 0.1])
    x, _ = forward(model, np.zeros(8), np.zeros(8), xi, eta)
    from meshonet.network import trunk_outputs

    np.testing.assert_array_equal(x, trunk_outputs(model, xi, eta)[:, 0])


def test_forward_shape_and_errors():
    model = init_model(TINY, 0)
    xi, eta = np.meshgrid(np.linspace(0, 1, 4), np.linspace(0, 1, 3), indexing="ij")
    x, y = forward(model, np.zeros(8), np.zeros(8), xi, eta)
    assert x.shape == (4, 3)
    with pytest.raises(ContractError):
        forward(model, np.zeros(7), np.zeros(7), xi, eta)
    model.params[3] = np.nan
    with pytest.raises(NumericError, match="branch_x layer 1"):
        forward(model, np.zeros(8), np.zeros(8), xi, eta)


def test_forward_deterministic():
    model = init_model(ModelSpec(m=16, k=8, q=3, branch_hidden=(8,), trunk_hidden=(8, 8)), 2)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(2, 16))
    xi, eta = rng.random(100), rng.random(100)
    a = forward(model, u[0], u[1], xi, eta)
    b = forward(model, u[0], u[1], xi, eta)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_chunked_trunk_matches_unchunked():
    from meshonet.network import trunk_outputs

    model = init_model(ModelSpec(m=8, k=6, q=2, branch_hidden=(4,), trunk_hidden=(7,)), 0)
    rng = np.random.default_rng(0)
    xi, eta = rng.random(1000), rng.random(1000)
    np.testing.assert_allclose(trunk_outputs(model, xi, eta, chunk=77), trunk_outputs(model, xi, eta), atol=1e-15)


def random_batch(rng, spec, n_traces):
    batch = []
    for _ in range(n_traces):
        n = int(rng.integers(3, 9))
        tags = rng.integers(0, 2, size=n)
        batch.append(
            BatchItem(rng.normal(size=spec.m), rng.normal(size=spec.m), rng.random(n), rng.random(n),
                      rng.normal(size=n), rng.normal(size=n), tags)
        )
    return batch


def test_loss_zero_when_prediction_matches():
    model = init_model(TINY, 0)
    rng = np.random.default_rng(0)
    batch = random_batch(rng, TINY, 2)
    for b in batch:
        b.x, b.y = forward(model, b.u1, b.u2, b.xi, b.eta)
    loss, grad = loss_and_gradients(model, batch)
    # the loss path batches the matmuls differently, so zero up to rounding
    assert loss < 1e-28 and np.max(np.abs(grad)) < 1e-13


def test_loss_constant_model():
    model = init_model(TINY, 0)
    model.params[:] = 0.0
    item = BatchItem(np.zeros(8), np.zeros(8), np.array([0.5]), np.array([0.5]), np.array([1.0]), np.array([2.0]),
                     np.array([INTERIOR]))
    loss, _ = loss_and_gradients(model, [item], w_int=1.0, w_bnd=7.0)
    assert loss == 5.0


def test_loss_weights_and_trace_average():
    model = init_model(TINY, 0)
    model.params[:] = 0.0
    mk = lambda tag, v: BatchItem(np.zeros(8), np.zeros(8), np.array([0.1]), np.array([0.1]),  # noqa: E731
                                  np.array([v]), np.array([0.0]), np.array([tag]))
    loss, _ = loss_and_gradients(model, [mk(INTERIOR, 1.0), mk(BOUNDARY, 2.0)], w_int=3.0, w_bnd=0.5)
    assert loss == pytest.approx((3.0 * 1.0 + 0.5 * 4.0) / 2)


def test_untagged_point_rejected():
    model = init_model(TINY, 0)
    rng = np.random.default_rng(0)
    batch = random_batch(rng, TINY, 1)
    batch[0].tags = np.array([0, 1, 2] + [0] * (len(batch[0].xi) - 3))
    with pytest.raises(ContractError):
        loss_and_gradients(model, batch)


def fd_gradient(model, batch, w_int, w_bnd, h=1e-5):
    g = np.empty_like(model.params)
    base = model.params.copy()
    for i in range(base.size):
        model.params[i] = base[i] + h
        lp, _ = loss_and_gradients(model, batch, w_int, w_bnd)
        model.params[i] = base[i] - h
        lm, _ = loss_and_gradients(model, batch, w_int, w_bnd)
        model.params[i] = base[i]
        g[i] = (lp - lm) / (2 * h)
    return g


def gradients_agree(a, f, rel=1e-4, floor=1e-8):
    return np.abs(a - f) <= np.maximum(floor, rel * np.maximum(np.abs(a), np.abs(f)))


@pytest.mark.parametrize("trial", range(20))
def test_gradient_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    spec = ModelSpec(
        m=int(rng.integers(8, 12)), k=int(rng.integers(2, 6)), q=int(rng.integers(1, 4)),
        branch_hidden=tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(1, 3))),
        trunk_hidden=tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(1, 3))),
    )
    model = init_model(spec, int(rng.integers(1 << 30)))
    model.params[-2:] = rng.normal(size=2)
    batch = random_batch(rng, spec, int(rng.integers(1, 4)))
    w_int, w_bnd = rng.uniform(0.5, 2.0, size=2)
    _, analytic = loss_and_gradients(model, batch, w_int, w_bnd)
    numeric = fd_gradient(model, batch, w_int, w_bnd)
    ok = gradients_agree(analytic, numeric)
    assert ok.all(), f"{np.count_nonzero(~ok)} components disagree"


def test_trunk_shared_branch_separate():
    model = init_model(TINY, 11)
    rng = np.random.default_rng(4)
    u1, u2 = rng.normal(size=8), rng.normal(size=8)
    xi, eta = rng.random(20), rng.random(20)
    x0, y0 = forward(model, u1, u2, xi, eta)
    n_branch = TINY.branch.n_params
    # first trunk weight
    p = model.copy()
    p.params[2 * n_branch] += 1e-3
    x1, y1 = forward(p, u1, u2, xi, eta)
    assert np.any(x1 != x0) and np.any(y1 != y0)
    # a branch_x weight leaves y untouched
    p = model.copy()
    p.params[0] += 1e-3
    x2, y2 = forward(p, u1, u2, xi, eta)
    assert np.any(x2 != x0) and np.array_equal(y2, y0)


def test_init_reproducible_and_seeded():
    a = init_model(TINY, 42)
    b = init_model(TINY, 42)
    c = init_model(TINY, 43)
    assert a.params.tobytes() == b.params.tobytes()
    assert not np.array_equal(a.params, c.params)


def test_init_weight_statistics():
    spec = ModelSpec(m=128, k=100, q=5, branch_hidden=(128, 128), trunk_hidden=(128, 128, 128))
    model = init_model(spec, 0)
    v = model.views
    # every one of these layers has fan_in 128, so they share one distribution
    layers = v.branch_x + v.branch_y + v.trunk[1:]
    W = np.concatenate([lay[0].ravel() for lay in layers])[:100_000]
    assert W.size == 100_000
    bound = 1 / np.sqrt(128)
    sigma = bound / np.sqrt(3) / np.sqrt(W.size)
    assert abs(W.mean()) < 3 * sigma
    assert np.all(np.abs(W) <= bound)
    # biases start at zero
    assert np.all(v.trunk[0][1] == 0) and np.all(v.bias == 0)


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    new, st = adam_step(p, np.zeros(2), AdamState.zeros(2))
    assert np.array_equal(new, p) and st.t == 1


def test_adam_first_step_moves_against_gradient():
    p = np.zeros(3)
    g = np.array([2.0, -0.5, 1e-3])
    new, _ = adam_step(p, g, AdamState.zeros(3), lr=0.01)
    np.testing.assert_allclose(new, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(np.abs(new), 0.01, rtol=1e-4)


def test_adam_quadratic():
    # oracle: the scalar recurrence written out directly
    p, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * p
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(p) < 0.1

    q, st = np.array([1.0]), AdamState.zeros(1)
    for _ in range(100):
        q, st = adam_step(q, 2 * q, st, lr=0.1)
    assert abs(q[0]) < 0.1
    assert q[0] == pytest.approx(p, abs=1e-12)


def test_checkpoint_round_trip(tmp_path):
    model = init_model(TINY, 9)
    model.meta["sensor_layout"] = [["south", 0.0], ["north", 0.5]]
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.params.tobytes() == model.params.tobytes()
    assert back.spec == model.spec and back.seed == 9 and back.meta == model.meta
    blob = (tmp_path / "m.ckpt").read_bytes()
    n = TINY.n_params
    assert np.frombuffer(blob[-8 * n:], dtype="<f8").tobytes() == model.params.astype("<f8").tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"hello")
    with pytest.raises(MeshFormatError):
        load_checkpoint(tmp_path / "bad")


def test_refinement_cost_affine_in_points():
    model = init_model(ModelSpec(), 0)
    u = np.zeros(128)
    sizes = [2000, 8000, 16000, 32000, 64000]
    times = []
    for n in sizes:
        xi = np.linspace(0, 1, n)
        forward(model, u, u, xi, xi)
        runs = []
        for _ in range(5):
            t0 = time.perf_counter()
            forward(model, u, u, xi, xi)
            runs.append(time.perf_counter() - t0)
        times.append(np.median(runs))
    slope, icpt = np.polyfit(sizes, times, 1)
    pred = slope * np.array(sizes) + icpt
    r2 = 1 - np.sum((np.array(times) - pred) ** 2) / np.sum((np.array(times) - np.mean(times)) ** 2)
    assert r2 >= 0.99
