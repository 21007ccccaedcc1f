"""Dual-branch / shared-trunk operator network with hand-written backprop.

All parameters live in one flat float64 vector; layers are views into it.
Weights are stored as (fan_in, fan_out) so a layer is ``h @ W + b``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MeshFormatError, NumericError

INTERIOR = 0
BOUNDARY = 1

TRUNK_CHUNK = 16384


@dataclass(frozen=True)
class LiftConfig:
    q: int = 5

    def __post_init__(self):
        if int(self.q) < 1:
            raise ContractError(f"lift degree q must be >= 1, got {self.q}")

    @property
    def dim(self) -> int:
        return 4 + 2 * self.q


def lift(xi, eta, cfg: LiftConfig | int) -> np.ndarray:
    """[sin xi, cos xi, sin eta, cos eta, xi, eta, xi^2, eta^2, ..., xi^q, eta^q]."""
    q = cfg.q if isinstance(cfg, LiftConfig) else int(cfg)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xi, eta = np.broadcast_arrays(xi, eta)
    out = np.empty(xi.shape + (4 + 2 * q,))
    out[..., 0] = np.sin(xi)
    out[..., 1] = np.cos(xi)
    out[..., 2] = np.sin(eta)
    out[..., 3] = np.cos(eta)
    pxi = np.ones_like(xi)
    peta = np.ones_like(eta)
    for p in range(1, q + 1):
        pxi = pxi * xi
        peta = peta * eta
        out[..., 2 + 2 * p] = pxi
        out[..., 3 + 2 * p] = peta
    return out


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths (input, hidden..., output); tanh on hidden layers, linear output."""

    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise ContractError("an MLP needs at least one hidden layer")
        if min(self.widths) < 1:
            raise ContractError(f"layer widths must be >= 1, got {self.widths}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


@dataclass(frozen=True)
class ModelSpec:
    m: int = 128
    k: int = 100
    q: int = 5
    branch_hidden: tuple[int, ...] = (128, 128)
    trunk_hidden: tuple[int, ...] = (128, 128, 128)

    @property
    def branch(self) -> MLPSpec:
        return MLPSpec((self.m, *self.branch_hidden, self.k))

    @property
    def trunk(self) -> MLPSpec:
        return MLPSpec((LiftConfig(self.q).dim, *self.trunk_hidden, self.k))

    @property
    def n_params(self) -> int:
        return 2 * self.branch.n_params + self.trunk.n_params + 2

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "q": self.q,
            "branch_hidden": list(self.branch_hidden),
            "trunk_hidden": list(self.trunk_hidden),
        }

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        return cls(int(d["m"]), int(d["k"]), int(d["q"]), tuple(d["branch_hidden"]), tuple(d["trunk_hidden"]))


def _layer_views(flat, spec: MLPSpec, offset: int):
    layers = []
    for a, b in zip(spec.widths[:-1], spec.widths[1:]):
        W = flat[offset : offset + a * b].reshape(a, b)
        offset += a * b
        bias = flat[offset : offset + b]
        offset += b
        layers.append((W, bias))
    return layers, offset


class _Views:
    """Named views (branch_x, branch_y, trunk layers and output biases) into a flat vector."""

    def __init__(self, flat: np.ndarray, spec: ModelSpec):
        self.branch_x, off = _layer_views(flat, spec.branch, 0)
        self.branch_y, off = _layer_views(flat, spec.branch, off)
        self.trunk, off = _layer_views(flat, spec.trunk, off)
        self.bias = flat[off : off + 2]


@dataclass
class MeshONetModel:
    spec: ModelSpec
    params: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (self.spec.n_params,):
            raise ContractError(f"parameter vector has {self.params.size} entries, spec needs {self.spec.n_params}")

    @property
    def views(self) -> _Views:
        return _Views(self.params, self.spec)

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def lift_config(self) -> LiftConfig:
        return LiftConfig(self.spec.q)

    def copy(self) -> "MeshONetModel":
        return MeshONetModel(self.spec, self.params.copy(), self.seed, json.loads(json.dumps(self.meta)))


def init_model(spec: ModelSpec, seed: int = 0) -> MeshONetModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    views = _Views(params, spec)
    for layers in (views.branch_x, views.branch_y, views.trunk):
        for W, _ in layers:
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
    return MeshONetModel(spec, params, seed)


# ---------------------------------------------------------------- forward / backward


def _mlp_forward(layers, X, name):
    acts = [X]
    h = X
    last = len(layers) - 1
    for li, (W, b) in enumerate(layers):
        h = h @ W + b
        if li < last:
            h = np.tanh(h)
        if not np.isfinite(h).all():
            raise NumericError(f"non-finite activation in {name} layer {li + 1}")
        acts.append(h)
    return acts


def _mlp_backward(layers, grad_layers, acts, delta):
    """Accumulate dW, db into ``grad_layers``; returns gradient w.r.t. the input."""
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = grad_layers[li]
        gW += acts[li].T @ delta
        gb += delta.sum(axis=0)
        delta = delta @ W.T
        if li > 0:
            delta *= 1.0 - acts[li] ** 2
    return delta


def _check_finite_params(model):
    if not np.isfinite(model.params).all():
        v = model.views
        for name, layers in (("branch_x", v.branch_x), ("branch_y", v.branch_y), ("trunk", v.trunk)):
            for li, (W, b) in enumerate(layers):
                if not (np.isfinite(W).all() and np.isfinite(b).all()):
                    raise NumericError(f"non-finite parameter in {name} layer {li + 1}")
        raise NumericError("non-finite output bias")


def branch_outputs(model: MeshONetModel, u1, u2) -> tuple[np.ndarray, np.ndarray]:
    """Branch-x(u1), Branch-y(u2) for one trace (1-D inputs) or a stack of traces (2-D)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    single = u1.ndim == 1
    u1 = np.atleast_2d(u1)
    u2 = np.atleast_2d(u2)
    m = model.spec.m
    if u1.shape[-1] != m or u2.shape[-1] != m or u1.shape != u2.shape:
        raise ContractError(f"sensor traces must have length m={m}, got {u1.shape[-1]} and {u2.shape[-1]}")
    v = model.views
    bx = _mlp_forward(v.branch_x, u1, "branch_x")[-1]
    by = _mlp_forward(v.branch_y, u2, "branch_y")[-1]
    return (bx[0], by[0]) if single else (bx, by)


def trunk_outputs(model: MeshONetModel, xi, eta, chunk: int = TRUNK_CHUNK) -> np.ndarray:
    feats = lift(np.ravel(xi), np.ravel(eta), model.spec.q)
    layers = model.views.trunk
    if len(feats) <= chunk:
        return _mlp_forward(layers, feats, "trunk")[-1]
    out = np.empty((len(feats), model.k))
    for s in range(0, len(feats), chunk):
        out[s : s + chunk] = _mlp_forward(layers, feats[s : s + chunk], "trunk")[-1]
    return out


def forward(model: MeshONetModel, u1, u2, xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates (x, y) at the query points (xi, eta) for one sensor trace.

    The branches run once; the trunk runs once per point, in chunks.
    """
    _check_finite_params(model)
    bx, by = branch_outputs(model, u1, u2)
    b0, b0y = model.views.bias
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast(xi, np.asarray(eta)).shape
    T = trunk_outputs(model, *np.broadcast_arrays(xi, np.asarray(eta, dtype=float)))
    return (T @ bx + b0).reshape(shape), (T @ by + b0y).reshape(shape)


@dataclass
class BatchItem:
    """One sensor trace with its query points, targets and interior/boundary tags."""

    u1: np.ndarray
    u2: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    tags: np.ndarray


def loss_and_gradients(
    model: MeshONetModel, batch: list[BatchItem], w_int: float = 1.0, w_bnd: float = 1.0
) -> tuple[float, np.ndarray]:
    """Weighted sum-of-squares loss averaged over traces, with its exact gradient.

    Returns ``(loss, grad)`` where ``grad`` is laid out like ``model.params``.
    """
    if not batch:
        raise ContractError("empty batch")
    spec = model.spec
    S = len(batch)
    for item in batch:
        tags = np.asarray(item.tags)
        if not np.isin(tags, (INTERIOR, BOUNDARY)).all():
            raise ContractError("every point must be tagged INTERIOR or BOUNDARY")
    v = model.views
    U1 = np.stack([np.asarray(b.u1, dtype=float) for b in batch])
    U2 = np.stack([np.asarray(b.u2, dtype=float) for b in batch])
    if U1.shape[1] != spec.m or U2.shape[1] != spec.m:
        raise ContractError(f"sensor traces must have length m={spec.m}")
    ax = _mlp_forward(v.branch_x, U1, "branch_x")
    ay = _mlp_forward(v.branch_y, U2, "branch_y")
    BX, BY = ax[-1], ay[-1]

    sizes = [len(b.xi) for b in batch]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    owner = np.repeat(np.arange(S), sizes)
    xi = np.concatenate([np.asarray(b.xi, dtype=float) for b in batch])
    eta = np.concatenate([np.asarray(b.eta, dtype=float) for b in batch])
    tx = np.concatenate([np.asarray(b.x, dtype=float) for b in batch])
    ty = np.concatenate([np.asarray(b.y, dtype=float) for b in batch])
    w = np.where(np.concatenate([np.asarray(b.tags) for b in batch]) == BOUNDARY, w_bnd, w_int)

    at = _mlp_forward(v.trunk, lift(xi, eta, spec.q), "trunk")
    T = at[-1]
    b0, b0y = v.bias
    px = np.einsum("pk,pk->p", T, BX[owner]) + b0
    py = np.einsum("pk,pk->p", T, BY[owner]) + b0y
    rx = px - tx
    ry = py - ty
    loss = float(np.sum(w * (rx * rx + ry * ry)) / S)

    grad = np.zeros_like(model.params)
    g = _Views(grad, spec)
    gx = (2.0 / S) * w * rx
    gy = (2.0 / S) * w * ry
    g.bias[0] = gx.sum()
    g.bias[1] = gy.sum()
    dBX = np.empty_like(BX)
    dBY = np.empty_like(BY)
    for s in range(S):
        sl = slice(bounds[s], bounds[s + 1])
        dBX[s] = gx[sl] @ T[sl]
        dBY[s] = gy[sl] @ T[sl]
    # both output paths feed the shared trunk
    dT = gx[:, None] * BX[owner] + gy[:, None] * BY[owner]
    _mlp_backward(v.trunk, g.trunk, at, dT)
    _mlp_backward(v.branch_x, g.branch_x, ax, dBX)
    _mlp_backward(v.branch_y, g.branch_y, ay, dBY)
    return loss, grad


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam. Returns ``(new_params, new_state)``; inputs are not modified."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ContractError("params, grads and optimiser state must share a shape")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MESHONET-CKPT\x00"
CKPT_VERSION = 1


def save_checkpoint(model: MeshONetModel, path) -> None:
    """Binary container: magic, version, JSON header, little-endian float64 parameters."""
    header = json.dumps(
        {"spec": model.spec.to_dict(), "seed": model.seed, "meta": model.meta, "n_params": model.spec.n_params},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path) -> MeshONetModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise MeshFormatError(f"{path}: not a MeshONet checkpoint")
    off = len(CKPT_MAGIC)
    try:
        version, hlen = struct.unpack_from("<II", blob, off)
    except struct.error:
        raise MeshFormatError(f"{path}: truncated checkpoint header") from None
    if version != CKPT_VERSION:
        raise MeshFormatError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(blob[off : off + hlen].decode("utf-8"))
    off += hlen
    spec = ModelSpec.from_dict(header["spec"])
    params = np.frombuffer(blob, dtype="<f8", offset=off)
    if params.size != spec.n_params or params.size != header["n_params"]:
        raise MeshFormatError(f"{path}: parameter blob has {params.size} values, expected {spec.n_params}")
    return MeshONetModel(spec, params.astype(np.float64), int(header["seed"]), header["meta"])


def predict_mesh(model: MeshONetModel, case, grid, sensor_layout=None):
    """Full-lattice prediction for ``case``; sensors default to the layout stored in the model."""
    from .geometry import sample_sensors
    from .mesh import PhysMesh

    layout = sensor_layout if sensor_layout is not None else model.meta.get("sensor_layout")
    if layout is None:
        raise ContractError("model carries no sensor layout; pass sensor_layout explicitly")
    if grid.topology != case.topology:
        raise ContractError(f"grid topology {grid.topology} does not match case topology {case.topology}")
    trace = sample_sensors(case, len(layout), layout)
    XI, ETA = grid.lattice()
    x, y = forward(model, trace.u1, trace.u2, XI, ETA)
    return PhysMesh(x, y, grid.topology)
