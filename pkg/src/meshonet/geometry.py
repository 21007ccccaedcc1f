"""Parametric boundary families and fixed-sensor sub-sampling.

Every family returns a :class:`GeometryCase`. H-topology cases carry four
curves (south, east, north, west) with south/north running in +x order and
west/east running in +y order, so that adjacent curves share corners exactly.
O-topology cases carry an inner and an outer closed loop, both traversed
counterclockwise with the seam on the +x ray from the hole centre.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError

H_SIDES = ("south", "east", "north", "west")
O_SIDES = ("inner", "outer")


@dataclass(frozen=True)
class BoundaryCurve:
    """A boundary curve on one side of the computational square.

    ``fn`` maps an array of parameters in [0, 1] to a pair of coordinate arrays.
    """

    side: str
    fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

    def eval(self, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        x, y = self.fn(t)
        return np.broadcast_to(x, t.shape).astype(float), np.broadcast_to(y, t.shape).astype(float)

    def __call__(self, t):
        return self.eval(t)


@dataclass(frozen=True)
class GeometryCase:
    topology: str
    curves: tuple[BoundaryCurve, ...]
    family_id: str
    param: float

    def __post_init__(self):
        sides = H_SIDES if self.topology == "H" else O_SIDES if self.topology == "O" else None
        if sides is None:
            raise ContractError(f"unknown topology {self.topology!r}")
        if tuple(c.side for c in self.curves) != sides:
            raise ContractError(f"{self.topology}-topology needs curves {sides}")

    def curve(self, side: str) -> BoundaryCurve:
        for c in self.curves:
            if c.side == side:
                return c
        raise KeyError(side)

    def closed_polyline(self, n: int) -> np.ndarray:
        """Boundary traversed once as an (N, 2) array, last point not repeated.

        For O topology the two loops are returned stacked; use
        :meth:`loops` when the loops are needed separately.
        """
        if self.topology == "O":
            return np.concatenate(self.loops(n))
        t = np.linspace(0.0, 1.0, n)
        pieces = []
        for side, reverse in (("south", False), ("east", False), ("north", True), ("west", True)):
            x, y = self.curve(side).eval(t[::-1] if reverse else t)
            pieces.append(np.column_stack([x, y])[:-1])
        return np.concatenate(pieces)

    def loops(self, n: int) -> list[np.ndarray]:
        t = np.arange(n) / n
        return [np.column_stack(c.eval(t)) for c in self.curves]


@dataclass(frozen=True)
class SensorTrace:
    m: int
    u1: np.ndarray
    u2: np.ndarray
    sensor_params: tuple[tuple[str, float], ...] = field(repr=False)


def _straight(side, p0, p1):
    (x0, y0), (x1, y1) = p0, p1

    def fn(t):
        # endpoint-exact linear blend
        return (1.0 - t) * x0 + t * x1, (1.0 - t) * y0 + t * y1

    return BoundaryCurve(side, fn)


def _check_range(name, value, lo, hi):
    if not (lo <= value <= hi):
        raise DomainError(f"{name}={value!r} outside [{lo}, {hi}]")


def unit_square() -> GeometryCase:
    return GeometryCase(
        "H",
        (
            _straight("south", (0, 0), (1, 0)),
            _straight("east", (1, 0), (1, 1)),
            _straight("north", (0, 1), (1, 1)),
            _straight("west", (0, 0), (0, 1)),
        ),
        "square",
        0.0,
    )


def make_arch(curvature: float) -> GeometryCase:
    """Unit square with the north edge lifted to ``1 + curvature * sin(pi t)``."""
    _check_range("curvature", curvature, 0.0, 1.0)
    c = float(curvature)

    def north(t):
        # sin(pi * min(t, 1-t)) is exactly 0 at both ends and exactly symmetric
        return t, 1.0 + c * np.sin(np.pi * np.minimum(t, 1.0 - t))

    sq = unit_square()
    return GeometryCase("H", (sq.curves[0], sq.curves[1], BoundaryCurve("north", north), sq.curves[3]), "arch", c)


def make_hexagon(angle_offset: float) -> GeometryCase:
    """North/south edges become two-segment polylines with apexes at
    ``(0.5, 1 + offset)`` and ``(0.5, -offset)``."""
    _check_range("angle_offset", angle_offset, 0.0, 0.4)
    a = float(angle_offset)

    def tent(t):
        return 1.0 - np.abs(2.0 * t - 1.0)

    def south(t):
        return t, -a * tent(t)

    def north(t):
        return t, 1.0 + a * tent(t)

    sq = unit_square()
    return GeometryCase(
        "H", (BoundaryCurve("south", south), sq.curves[1], BoundaryCurve("north", north), sq.curves[3]), "hexagon", a
    )


SEMICIRCLE_RADIUS = 0.15


def make_shifted_semicircle(shift: float) -> GeometryCase:
    """Unit square whose south edge carries an upward semicircular bump of
    radius 0.15 centred at ``(shift, 0)``, parametrised by arc length."""
    _check_range("shift", shift, 0.25, 0.75)
    s, r = float(shift), SEMICIRCLE_RADIUS
    a = s - r  # start of the bump
    length = (1.0 - 2.0 * r) + np.pi * r

    def south(t):
        d = t * length
        x = np.empty_like(d)
        y = np.zeros_like(d)
        left = d <= a
        right = d >= a + np.pi * r
        arc = ~(left | right)
        x[left] = d[left]
        # measured from the far end so that t = 1 lands on x = 1 exactly
        x[right] = 1.0 - (length - d[right])
        theta = np.pi - (d[arc] - a) / r
        x[arc] = s + r * np.cos(theta)
        y[arc] = r * np.sin(theta)
        return x, y

    sq = unit_square()
    return GeometryCase(
        "H", (BoundaryCurve("south", south), sq.curves[1], sq.curves[2], sq.curves[3]), "semicircle", s
    )


HOLE_RADIUS = 0.1


def make_annulus_hole(hole_y: float) -> GeometryCase:
    """O-topology: circular hole of radius 0.1 at ``(0.5, hole_y)`` inside the unit square."""
    _check_range("hole_y", hole_y, 0.35, 0.65)
    cy, r = float(hole_y), HOLE_RADIUS

    def inner(t):
        th = 2.0 * np.pi * np.mod(t, 1.0)
        return 0.5 + r * np.cos(th), cy + r * np.sin(th)

    # perimeter walked counterclockwise from (1, cy); knots in arc length
    knots = np.array([0.0, 1.0 - cy, 2.0 - cy, 3.0 - cy, 4.0 - cy, 4.0])
    kx = np.array([1.0, 1.0, 0.0, 0.0, 1.0, 1.0])
    ky = np.array([cy, 1.0, 1.0, 0.0, 0.0, cy])

    def outer(t):
        d = 4.0 * np.mod(t, 1.0)
        return np.interp(d, knots, kx), np.interp(d, knots, ky)

    return GeometryCase("O", (BoundaryCurve("inner", inner), BoundaryCurve("outer", outer)), "annulus", cy)


FAMILIES: dict[str, Callable[[float], GeometryCase]] = {
    "arch": make_arch,
    "hexagon": make_hexagon,
    "semicircle": make_shifted_semicircle,
    "annulus": make_annulus_hole,
}

FAMILY_RANGES = {"arch": (0.0, 1.0), "hexagon": (0.0, 0.4), "semicircle": (0.25, 0.75), "annulus": (0.35, 0.65)}


def make_case(family: str, param: float) -> GeometryCase:
    try:
        factory = FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown geometry family {family!r}; choose from {sorted(FAMILIES)}") from None
    return factory(float(param))


def family_topology(family: str) -> str:
    return make_case(family, FAMILY_RANGES[family][0]).topology


def default_sensor_layout(topology: str, m: int = 128) -> tuple[tuple[str, float], ...]:
    """Equispaced sensors, ``m`` split evenly over the curves of ``topology``.

    Each curve gets ``t = j / n`` for ``j < n``; leftover sensors go to the
    first curves.
    """
    sides = H_SIDES if topology == "H" else O_SIDES
    if m < 8:
        raise ContractError(f"need at least 8 sensors, got {m}")
    base, extra = divmod(m, len(sides))
    layout = []
    for k, side in enumerate(sides):
        n = base + (1 if k < extra else 0)
        layout.extend((side, j / n) for j in range(n))
    return tuple(layout)


def sample_sensors(case: GeometryCase, m: int, sensor_params: Sequence[tuple[str, float]]) -> SensorTrace:
    sensor_params = tuple((str(s), float(t)) for s, t in sensor_params)
    if len(sensor_params) != m:
        raise ContractError(f"sensor layout has {len(sensor_params)} entries, expected m={m}")
    u1 = np.empty(m)
    u2 = np.empty(m)
    sides = np.array([s for s, _ in sensor_params])
    ts = np.array([t for _, t in sensor_params])
    for c in case.curves:
        sel = sides == c.side
        if sel.any():
            u1[sel], u2[sel] = c.eval(ts[sel])
    known = {c.side for c in case.curves}
    unknown = set(sides.tolist()) - known
    if unknown:
        raise ContractError(f"sensor sides {sorted(unknown)} not in {case.topology}-topology case")
    return SensorTrace(m, u1, u2, sensor_params)


def _cross_pairs(a0, a1, b0, b1) -> np.ndarray:
    """Boolean matrix: segment a_i (a0[i]->a1[i]) touches segment b_j."""

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    def on_seg(p, q, r):
        return (
            (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
            & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
            & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
            & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
        )

    p1, p2 = a0[:, None], a1[:, None]
    p3, p4 = b0[None, :], b1[None, :]
    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    touch = (
        ((d1 == 0) & on_seg(p3, p4, p1))
        | ((d2 == 0) & on_seg(p3, p4, p2))
        | ((d3 == 0) & on_seg(p1, p2, p3))
        | ((d4 == 0) & on_seg(p1, p2, p4))
    )
    return proper | touch


def segments_intersect_count(poly: np.ndarray) -> int:
    """Count of touching pairs of non-adjacent segments in a closed polyline."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    nxt = np.roll(poly, -1, axis=0)
    hit = _cross_pairs(poly, nxt, poly, nxt)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    return int(np.count_nonzero(hit[i[keep], j[keep]]))


def boundary_self_intersections(case: GeometryCase, n: int) -> int:
    """Crossings in the sampled boundary (``n`` points per curve).

    For O topology each loop must be simple and the loops must not touch.
    """
    if case.topology == "H":
        return segments_intersect_count(case.closed_polyline(n))
    inner, outer = case.loops(n)
    count = segments_intersect_count(inner) + segments_intersect_count(outer)
    between = _cross_pairs(inner, np.roll(inner, -1, axis=0), outer, np.roll(outer, -1, axis=0))
    return count + int(np.count_nonzero(between))
