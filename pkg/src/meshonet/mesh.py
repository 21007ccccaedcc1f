"""Structured-mesh data model, quality metrics and the ASCII mesh format."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MeshFormatError

FORMAT_VERSION = 1
HIST_EDGES = np.linspace(90.0, 180.0, 19)
DEGENERATE_ANGLE = 360.0


@dataclass(frozen=True)
class CompGrid:
    n_xi: int
    n_eta: int
    topology: str = "H"

    def __post_init__(self):
        if self.n_xi < 3 or self.n_eta < 3:
            raise ContractError(f"grid needs at least 3 points per direction, got {self.n_xi}x{self.n_eta}")
        if self.topology not in ("H", "O"):
            raise ContractError(f"unknown topology {self.topology!r}")

    @property
    def xi(self) -> np.ndarray:
        if self.topology == "O":
            return np.arange(self.n_xi) / self.n_xi
        return np.arange(self.n_xi) / (self.n_xi - 1)

    @property
    def eta(self) -> np.ndarray:
        return np.arange(self.n_eta) / (self.n_eta - 1)

    def lattice(self) -> tuple[np.ndarray, np.ndarray]:
        """(xi, eta) arrays of shape (n_xi, n_eta)."""
        return np.meshgrid(self.xi, self.eta, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_xi, self.n_eta), dtype=bool)
        mask[:, 0] = mask[:, -1] = True
        if self.topology == "H":
            mask[0, :] = mask[-1, :] = True
        return mask


def parse_resolution(text: str) -> tuple[int, int]:
    """``"33x33"`` or ``"33"`` -> (33, 33)."""
    parts = str(text).lower().replace("×", "x").split("x")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return n, n
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ContractError(f"bad resolution {text!r}; expected NxM")


@dataclass
class PhysMesh:
    """Physical coordinates indexed ``[i, j]`` with i along xi and j along eta.

    O-topology meshes are periodic in xi and store no duplicate seam column.
    """

    x: np.ndarray
    y: np.ndarray
    topology: str = "H"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.x.shape != self.y.shape:
            raise ContractError(f"x and y must be equal-shape 2-D arrays, got {self.x.shape} and {self.y.shape}")
        if self.topology not in ("H", "O"):
            raise ContractError(f"unknown topology {self.topology!r}")

    @property
    def n_xi(self) -> int:
        return self.x.shape[0]

    @property
    def n_eta(self) -> int:
        return self.x.shape[1]

    @property
    def grid(self) -> CompGrid:
        return CompGrid(self.n_xi, self.n_eta, self.topology)

    def copy(self) -> "PhysMesh":
        return PhysMesh(self.x.copy(), self.y.copy(), self.topology)

    def __eq__(self, other):
        if not isinstance(other, PhysMesh):
            return NotImplemented
        return (
            self.topology == other.topology
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


# ---------------------------------------------------------------- quality


def _cell_corners(mesh: PhysMesh):
    """Corner coordinate arrays (p00, p10, p11, p01), each of shape (cells_xi, cells_eta, 2)."""
    p = np.stack([mesh.x, mesh.y], axis=-1)
    if mesh.topology == "O":
        nxt = np.roll(p, -1, axis=0)
        lo, hi = p, nxt
    else:
        lo, hi = p[:-1], p[1:]
    return lo[:, :-1], hi[:, :-1], hi[:, 1:], lo[:, 1:]


def _check_cells(mesh: PhysMesh):
    cells_xi = mesh.n_xi if mesh.topology == "O" else mesh.n_xi - 1
    if cells_xi < 2 or mesh.n_eta - 1 < 2:
        raise ContractError("quality metrics need at least 2x2 cells")


def cell_angles(mesh: PhysMesh) -> np.ndarray:
    """Interior angles in degrees, shape (cells_xi, cells_eta, 4).

    Corners whose adjacent edges have zero length get ``DEGENERATE_ANGLE``.
    """
    _check_cells(mesh)
    corners = _cell_corners(mesh)
    out = np.empty(corners[0].shape[:2] + (4,))
    for k in range(4):
        here = corners[k]
        e_prev = corners[k - 1] - here
        e_next = corners[(k + 1) % 4] - here
        dot = np.einsum("...i,...i->...", e_prev, e_next)
        cross = e_prev[..., 0] * e_next[..., 1] - e_prev[..., 1] * e_next[..., 0]
        # atan2(|cross|, dot) is arccos of the normalised dot product without its
        # loss of precision near 0 and 180 degrees
        ang = np.degrees(np.arctan2(np.abs(cross), dot))
        degenerate = ~np.any(e_prev != 0, axis=-1) | ~np.any(e_next != 0, axis=-1)
        ang[degenerate] = DEGENERATE_ANGLE
        out[..., k] = ang
    return out


def jacobian(mesh: PhysMesh) -> np.ndarray:
    """Cell-centre Jacobian x_xi*y_eta - x_eta*y_xi from bilinear corners, signed
    so that a valid cell is positive for either topology."""
    _check_cells(mesh)
    p00, p10, p11, p01 = _cell_corners(mesh)
    d_xi = 0.5 * ((p10 + p11) - (p00 + p01))
    d_eta = 0.5 * ((p01 + p11) - (p00 + p10))
    j = d_xi[..., 0] * d_eta[..., 1] - d_eta[..., 0] * d_xi[..., 1]
    # O grids run counterclockwise in xi and outward in eta: valid cells are negative
    return -j if mesh.topology == "O" else j


def count_inverted(mesh: PhysMesh) -> int:
    return int(np.count_nonzero(~(jacobian(mesh) > 0)))


@dataclass
class QualityReport:
    max_angle: np.ndarray = field(repr=False)
    mean: float
    max: float
    histogram: np.ndarray
    degenerate_cells: int
    inverted_cells: int
    boundary_deviation: float | None = None

    @property
    def valid(self) -> bool:
        return self.inverted_cells == 0

    def summary_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("cells", str(self.max_angle.size)),
            ("mean_max_angle_deg", f"{self.mean:.6f}"),
            ("max_max_angle_deg", f"{self.max:.6f}"),
            ("degenerate_cells", str(self.degenerate_cells)),
            ("inverted_cells", str(self.inverted_cells)),
        ]
        if self.boundary_deviation is not None:
            rows.append(("boundary_deviation", f"{self.boundary_deviation:.6e}"))
        return rows

    def format_text(self) -> str:
        rows = self.summary_rows()
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v}" for k, v in rows]
        lines.append("histogram (max included angle, 5 deg bins):")
        for lo, count in zip(HIST_EDGES[:-1], self.histogram):
            lines.append(f"  [{lo:5.1f}, {lo + 5:5.1f})  {int(count)}")
        return "\n".join(lines)


def max_included_angle(mesh: PhysMesh) -> np.ndarray:
    """Per-cell maximum interior angle in degrees, shape (cells_xi, cells_eta)."""
    return cell_angles(mesh).max(axis=-1)


def boundary_deviation(mesh: PhysMesh, case) -> float:
    """Max distance between mesh boundary nodes and the curves evaluated at the
    same lattice parameters."""
    grid = mesh.grid
    d = 0.0
    if mesh.topology == "H":
        sides = {
            "south": (grid.xi, (slice(None), 0)),
            "north": (grid.xi, (slice(None), -1)),
            "west": (grid.eta, (0, slice(None))),
            "east": (grid.eta, (-1, slice(None))),
        }
    else:
        sides = {"inner": (grid.xi, (slice(None), 0)), "outer": (grid.xi, (slice(None), -1))}
    for side, (t, idx) in sides.items():
        cx, cy = case.curve(side).eval(t)
        d = max(d, float(np.max(np.hypot(mesh.x[idx] - cx, mesh.y[idx] - cy))))
    return d


def quality_report(mesh: PhysMesh, case=None) -> QualityReport:
    angles = max_included_angle(mesh)
    hist, _ = np.histogram(angles, bins=HIST_EDGES)
    return QualityReport(
        max_angle=angles,
        mean=float(angles.mean()),
        max=float(angles.max()),
        histogram=hist,
        degenerate_cells=int(np.count_nonzero(angles == DEGENERATE_ANGLE)),
        inverted_cells=count_inverted(mesh),
        boundary_deviation=None if case is None else boundary_deviation(mesh, case),
    )


# ---------------------------------------------------------------- file I/O


def format_mesh(mesh: PhysMesh) -> str:
    lines = [f"MESHONET {FORMAT_VERSION} {mesh.topology}", f"{mesh.n_xi} {mesh.n_eta}"]
    # eta outer, xi inner
    xs = mesh.x.T.ravel()
    ys = mesh.y.T.ravel()
    lines.extend(f"{a:.17g} {b:.17g}" for a, b in zip(xs.tolist(), ys.tolist()))
    return "\n".join(lines) + "\n"


def write_mesh(mesh: PhysMesh, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_mesh(mesh))


def parse_mesh(text: str, source: str = "<string>") -> PhysMesh:
    lines = text.splitlines()

    def fail(lineno, msg):
        raise MeshFormatError(f"{source}:{lineno}: {msg}")

    if not lines:
        fail(1, "empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "MESHONET":
        fail(1, f"expected 'MESHONET <version> <H|O>', got {lines[0]!r}")
    if head[1] != str(FORMAT_VERSION):
        fail(1, f"unsupported format version {head[1]!r} (this reader handles {FORMAT_VERSION})")
    topology = head[2]
    if topology not in ("H", "O"):
        fail(1, f"unknown topology {topology!r}")
    if len(lines) < 2:
        fail(2, "missing dimension line")
    dims = lines[1].split()
    try:
        n_xi, n_eta = (int(v) for v in dims)
    except ValueError:
        fail(2, f"expected '<n_xi> <n_eta>', got {lines[1]!r}")
    if n_xi < 1 or n_eta < 1:
        fail(2, "dimensions must be positive")
    n = n_xi * n_eta
    body = lines[2:]
    if len(body) < n:
        fail(len(lines) + 1, f"unexpected end of file: expected {n} coordinate lines, found {len(body)}")
    if len(body) > n:
        fail(n + 3, f"trailing data after {n} coordinate lines")
    coords = np.empty((n, 2))
    for k, line in enumerate(body):
        tok = line.split()
        if len(tok) != 2:
            fail(k + 3, f"expected 2 coordinates, got {len(tok)}")
        try:
            coords[k] = float(tok[0]), float(tok[1])
        except ValueError:
            fail(k + 3, f"non-numeric token in {line!r}")
    x = coords[:, 0].reshape(n_eta, n_xi).T.copy()
    y = coords[:, 1].reshape(n_eta, n_xi).T.copy()
    return PhysMesh(x, y, topology)


def read_mesh(path) -> PhysMesh:
    with open(path, encoding="ascii") as fh:
        return parse_mesh(fh.read(), os.fspath(path))
