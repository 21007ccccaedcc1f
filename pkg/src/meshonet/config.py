"""Flat ``key = value`` experiment configuration.

One experiment per file. Blank lines and ``#`` comments are ignored; values
are Python literals (numbers, strings, lists) and bare words are read as
strings. Every key has a default, listed in ``DEFAULTS``; unknown keys are
rejected so that a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .elliptic import SolverConfig
from .errors import ConfigError
from .geometry import FAMILY_RANGES, default_sensor_layout, family_topology
from .mesh import parse_resolution
from .network import ModelSpec
from .training import Split, TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    # geometry and split
    family: str = "arch"
    protocol: str = "interpolation"
    train_params: tuple = (0.1, 0.9)
    test_params: tuple = (0.5,)
    resolution: str = "33x33"
    sensors: int = 128
    # elliptic ground truth
    omega: float = 1.3
    tol: float = 1e-8
    max_iters: int = 0  # 0 selects the size-based default cap
    # model
    k: int = 100
    q: int = 5
    branch_hidden: tuple = (128, 128)
    trunk_hidden: tuple = (128, 128, 128)
    # training
    iterations: int = 100_000
    interior_batch: int = 256
    lr: float = 1e-3
    lr_schedule: str = "step"
    lr_decay: float = 0.5
    lr_step: int = 20_000
    w_int: float = 1.0
    w_bnd: float = 1.0
    eval_interval: int = 100
    # refinement
    refine_resolutions: tuple = ("33x33", "65x65", "129x129", "257x257", "513x513")
    elliptic_cutoff: float = 600.0  # seconds; predicted elliptic solves above this are skipped
    # bookkeeping
    output_dir: str = "artifacts"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.family not in FAMILY_RANGES:
            raise ConfigError(f"unknown family {self.family!r}")
        for name in ("train_params", "test_params", "branch_hidden", "trunk_hidden", "refine_resolutions"):
            v = getattr(self, name)
            if isinstance(v, (int, float, str)):
                v = (v,)
            object.__setattr__(self, name, tuple(v))
        try:
            parse_resolution(self.resolution)
            for r in self.refine_resolutions:
                parse_resolution(r)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.sensors < 8:
            raise ConfigError("sensors must be >= 8")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        # surface bad values now rather than halfway through a run
        self.split()
        self.solver()
        self.train_config()
        self.model_spec()

    # -------------------------------------------------------------- views

    @property
    def grid_shape(self) -> tuple[int, int]:
        return parse_resolution(self.resolution)

    @property
    def topology(self) -> str:
        return family_topology(self.family)

    def split(self) -> Split:
        return Split(self.protocol, self.train_params, self.test_params)

    def solver(self) -> SolverConfig:
        try:
            return SolverConfig(self.omega, self.tol, self.max_iters or None)
        except Exception as exc:
            raise ConfigError(str(exc)) from None

    def model_spec(self) -> ModelSpec:
        try:
            return ModelSpec(self.sensors, self.k, self.q, tuple(self.branch_hidden), tuple(self.trunk_hidden))
        except Exception as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            interior_batch=self.interior_batch,
            lr=self.lr,
            lr_schedule=self.lr_schedule,
            lr_decay=self.lr_decay,
            lr_step=self.lr_step,
            w_int=self.w_int,
            w_bnd=self.w_bnd,
            seed=self.seed,
            eval_interval=self.eval_interval,
        )

    def sensor_layout(self):
        return default_sensor_layout(self.topology, self.sensors)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        unknown = set(kw) - KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **kw)

    def format(self) -> str:
        """Canonical text form; ``parse_config(cfg.format()) == cfg``."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {list(v) if isinstance(v, tuple) else v!r}")
        return "\n".join(out) + "\n"


KEYS = frozenset(f.name for f in fields(ExperimentConfig))
DEFAULTS = {f.name: f.default for f in fields(ExperimentConfig)}


def _coerce_item(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(name: str, raw: str, where: str):
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw
        if raw.startswith("[") and raw.endswith("]"):
            # list of bare words, e.g. [33x33, 65x65]
            value = [_coerce_item(v.strip()) for v in raw[1:-1].split(",") if v.strip()]
    default = DEFAULTS[name]
    if isinstance(default, tuple):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if isinstance(default, bool) or isinstance(default, str):
        return str(value)
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where}: {name} expects an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {name} expects a number, got {raw!r}")
        return float(value)
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{no}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, f"{source}:{no}")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
