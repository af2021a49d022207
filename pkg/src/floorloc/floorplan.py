"""Occupancy grids, poses, file formats and ray casting.

Grid conventions
----------------
``occupied[j, i]`` is cell column ``i`` (x) and row ``j`` (y), with row 0 the
lowest y. Cell ``(i, j)`` covers ``[x0 + i*res, x0 + (i+1)*res) x
[y0 + j*res, y0 + (j+1)*res)``. Angles are radians, counter-clockwise from +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InconsistentDims, MalformedFile, OriginOccupied, OriginOutside, ZeroArea
from .pgm import read_pgm, write_pgm

DEFAULT_MAX_RANGE = 50.0
JSON_GRID_VERSION = 1

# World ray directions are snapped to this lattice so that (bin, ray) pairs
# that describe the same direction share one cached cast.
ANGLE_QUANTUM = 2.0**-36

# range tables larger than this fall back to casting on demand
DEFAULT_TABLE_BYTES = 1 << 30


def wrap_angle(a):
    """Wrap radians into [-pi, pi). Works on scalars and arrays."""
    if np.ndim(a) == 0:
        a = float(a)
        if -math.pi <= a < math.pi:
            return a
        w = (a + math.pi) % (2.0 * math.pi) - math.pi
        return -math.pi if w >= math.pi else w
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w >= np.pi, -np.pi, w)
    return np.where((a >= -np.pi) & (a < np.pi), a, w)


def world_angles(phi, alphas) -> np.ndarray:
    """Absolute, wrapped and snapped directions ``phi + alpha``.

    Broadcasts: ``phi`` of shape (K, 1) against ``alphas`` of shape (R,)
    gives a (K, R) table.
    """
    a = np.add(np.asarray(phi, dtype=float), np.asarray(alphas, dtype=float))
    a = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    a = np.round(a / ANGLE_QUANTUM) * ANGLE_QUANTUM
    return np.where(a >= np.pi, a - 2.0 * np.pi, a)


def bin_centers(n_theta: int) -> np.ndarray:
    """Orientation bin centers ``-pi + 2*pi*k/n_theta``."""
    return -np.pi + 2.0 * np.pi * np.arange(n_theta) / n_theta


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def compose(self, dx: float, dy: float, dphi: float) -> "Pose2":
        """``self (+) (dx, dy, dphi)`` with the motion in this pose's frame."""
        c, s = math.cos(self.phi), math.sin(self.phi)
        return Pose2(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.phi + dphi)

    def relative_to(self, other: "Pose2") -> tuple[float, float, float]:
        """Motion ``t`` such that ``other.compose(*t) == self``."""
        c, s = math.cos(other.phi), math.sin(other.phi)
        ex, ey = self.x - other.x, self.y - other.y
        return (c * ex + s * ey, -s * ex + c * ey, wrap_angle(self.phi - other.phi))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.phi)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary occupancy grid; immutable after construction."""

    occupied: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        occ = np.array(self.occupied, dtype=bool)
        if occ.ndim != 2:
            raise InconsistentDims(f"grid must be 2D, got shape {occ.shape}")
        if occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ZeroArea(f"grid has shape {occ.shape}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "_codes", _kernels.padded_codes(occ))
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width_cells(self) -> int:
        return self.occupied.shape[1]

    @property
    def height_cells(self) -> int:
        return self.occupied.shape[0]

    @property
    def extent(self) -> tuple[float, float]:
        """World size (width_m, height_m)."""
        return (self.width_cells * self.resolution, self.height_cells * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """(i, j) of the cell containing (x, y), or None outside the grid."""
        i = math.floor((x - self.origin[0]) / self.resolution)
        j = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= i < self.width_cells and 0 <= j < self.height_cells:
            return int(i), int(j)
        return None

    def cell_center(self, i, j):
        """World coordinates of cell centers; accepts scalars or arrays."""
        res = self.resolution
        return (
            self.origin[0] + (np.asarray(i) + 0.5) * res,
            self.origin[1] + (np.asarray(j) + 0.5) * res,
        )

    def is_free(self, x: float, y: float) -> bool:
        c = self.cell_of(x, y)
        return c is not None and not self.occupied[c[1], c[0]]

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.occupied, other.occupied)
        )

    __hash__ = None


def free_space_mask(grid: OccupancyGrid) -> np.ndarray:
    """True where the cell is free; shape (height_cells, width_cells)."""
    return ~grid.occupied


# ---------------------------------------------------------------- file I/O


def _parse_json_grid(path: Path) -> OccupancyGrid:
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedFile(f"{path}: top level must be an object")
    version = doc.get("format_version", JSON_GRID_VERSION)
    if version != JSON_GRID_VERSION:
        raise MalformedFile(f"{path}: unsupported format_version {version!r}")
    try:
        resolution = float(doc["resolution"])
        origin = doc.get("origin", [0.0, 0.0])
        rows = doc["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"{path}: missing or invalid key {exc}") from exc
    if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
        raise MalformedFile(f"{path}: 'rows' must be a list of strings")
    if len(origin) != 2:
        raise MalformedFile(f"{path}: 'origin' must be [x0, y0]")
    if len(rows) == 0 or len(rows[0]) == 0:
        raise ZeroArea(f"{path}: empty grid")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InconsistentDims(f"{path}: rows have unequal lengths")
    if "width" in doc and doc["width"] != width or "height" in doc and doc["height"] != len(rows):
        raise InconsistentDims(f"{path}: declared size does not match rows")
    bad = set("".join(rows)) - {".", "#"}
    if bad:
        raise MalformedFile(f"{path}: unexpected cell characters {sorted(bad)}")
    occ = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
    if resolution <= 0:
        raise MalformedFile(f"{path}: resolution must be positive")
    return OccupancyGrid(occ, resolution, (float(origin[0]), float(origin[1])))


def _parse_pgm_grid(path: Path, resolution: float | None, origin) -> OccupancyGrid:
    pixels, maxval = read_pgm(path)
    sidecar = path.with_suffix(".json")
    meta = {}
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{sidecar}: {exc}") from exc
    if resolution is None:
        resolution = meta.get("resolution")
    if origin is None:
        origin = meta.get("origin", [0.0, 0.0])
    if resolution is None:
        raise MalformedFile(f"{path}: no resolution given (flag or {sidecar.name})")
    occ = pixels * (255.0 / maxval) < 128
    # first file row is the top (highest y)
    return OccupancyGrid(occ[::-1], float(resolution), tuple(origin))


def load_grid(
    path: str | Path,
    format: str | None = None,
    resolution: float | None = None,
    origin: tuple[float, float] | None = None,
) -> OccupancyGrid:
    """Load a grid from ``json-grid`` or ``pgm-ascii``.

    The format is guessed from the suffix when not given (``.pgm`` ->
    pgm-ascii, otherwise json-grid). For PGM, ``resolution``/``origin`` come
    from the arguments or from a sidecar ``<stem>.json``. Pixels below 128
    (on a 0-255 scale) are occupied.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format is None:
        format = "pgm-ascii" if path.suffix.lower() == ".pgm" else "json-grid"
    if format == "json-grid":
        return _parse_json_grid(path)
    if format == "pgm-ascii":
        return _parse_pgm_grid(path, resolution, origin)
    raise ValueError(f"unknown grid format {format!r}")


def save_grid(grid: OccupancyGrid, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "pgm-ascii" if path.suffix.lower() == ".pgm" else "json-grid"
    if format == "json-grid":
        doc = {
            "format_version": JSON_GRID_VERSION,
            "resolution": grid.resolution,
            "origin": list(grid.origin),
            "rows": ["".join("#" if c else "." for c in row) for row in grid.occupied],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
    elif format == "pgm-ascii":
        write_pgm(path, np.where(grid.occupied, 0, 255)[::-1])
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"resolution": grid.resolution, "origin": list(grid.origin)}) + "\n")
    else:
        raise ValueError(f"unknown grid format {format!r}")


def resample_grid(grid: OccupancyGrid, resolution: float, threshold: float = 0.5, samples: int = 5) -> OccupancyGrid:
    """Re-rasterize onto cells of a different size, same origin.

    A new cell is occupied when at least ``threshold`` of a ``samples x
    samples`` lattice of points inside it falls on occupied (or off-grid)
    source cells.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    if resolution == grid.resolution:
        return grid
    w_m, h_m = grid.extent
    nx = max(1, math.ceil(w_m / resolution - 1e-9))
    ny = max(1, math.ceil(h_m / resolution - 1e-9))
    sub = (np.arange(samples) + 0.5) / samples
    gx = ((np.arange(nx)[:, None] + sub[None, :]) * resolution / grid.resolution).ravel()
    gy = ((np.arange(ny)[:, None] + sub[None, :]) * resolution / grid.resolution).ravel()
    ix = np.floor(gx).astype(int)
    iy = np.floor(gy).astype(int)
    inside_x = ix < grid.width_cells
    inside_y = iy < grid.height_cells
    occ = np.ones((iy.size, ix.size), dtype=bool)
    occ[np.ix_(inside_y, inside_x)] = grid.occupied[np.ix_(iy[inside_y], ix[inside_x])]
    frac = occ.reshape(ny, samples, nx, samples).mean(axis=(1, 3))
    return OccupancyGrid(frac >= threshold, resolution, grid.origin)


# ----------------------------------------------------------- ray casting


def _direction(angle: float) -> tuple[float, float]:
    return math.cos(angle), math.sin(angle)


def _cast_raw(grid: OccupancyGrid, x: float, y: float, angle: float, max_range: float) -> float:
    dx, dy = _direction(angle)
    r = _kernels.cast(grid._codes, grid.origin[0], grid.origin[1], grid.resolution, x, y, dx, dy, max_range)
    if r == _kernels.ORIGIN_OUTSIDE:
        raise OriginOutside(f"origin ({x:.4f}, {y:.4f}) is outside the grid")
    if r == _kernels.ORIGIN_OCCUPIED:
        raise OriginOccupied(f"origin ({x:.4f}, {y:.4f}) is in an occupied cell")
    return r


def cast_ray(grid: OccupancyGrid, origin, angle: float, max_range: float = DEFAULT_MAX_RANGE) -> float | None:
    """Distance to the first occupied cell along an absolute world angle.

    Returns None (no hit) when the ray leaves the grid or passes
    ``max_range`` first. ``origin`` is an (x, y) pair or a :class:`Pose2`.
    """
    if max_range <= 0:
        raise ValueError("max_range must be > 0")
    x, y = (origin.x, origin.y) if isinstance(origin, Pose2) else origin
    r = _cast_raw(grid, float(x), float(y), float(angle), float(max_range))
    return None if r < 0 else r


def floorplan_depth(
    grid: OccupancyGrid, pose: Pose2, ray_angles, max_range: float = DEFAULT_MAX_RANGE
) -> np.ndarray:
    """Depth along the optical axis, ``range * cos(alpha)``, for each ray.

    ``ray_angles`` are relative to the heading. Rays without a hit are NaN.
    """
    alphas = np.atleast_1d(np.asarray(ray_angles, dtype=float))
    if np.any(np.abs(alphas) >= np.pi / 2):
        raise ValueError("ray angles must lie in (-pi/2, pi/2)")
    if max_range <= 0:
        raise ValueError("max_range must be > 0")
    world = world_angles(pose.phi, alphas)
    out = np.empty(alphas.size)
    for j in range(alphas.size):
        r = _cast_raw(grid, pose.x, pose.y, float(world[j]), float(max_range))
        out[j] = np.nan if r < 0 else r * math.cos(float(alphas[j]))
    return out


@dataclass(eq=False)
class RangeTable:
    """Cached cast ranges from every free cell center, keyed by world angle.

    Columns are added lazily as new directions are requested. A range of -1
    marks a ray with no hit. ``max_bytes`` caps the cache size; see
    :meth:`try_columns`.
    """

    grid: OccupancyGrid
    max_range: float = DEFAULT_MAX_RANGE
    max_bytes: int = DEFAULT_TABLE_BYTES
    cell_y: np.ndarray = field(init=False, repr=False)
    cell_x: np.ndarray = field(init=False, repr=False)
    ranges: np.ndarray = field(init=False, repr=False)
    _columns: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        cy, cx = np.nonzero(~self.grid.occupied)
        self.cell_y = cy.astype(np.int64)
        self.cell_x = cx.astype(np.int64)
        px, py = self.grid.cell_center(cx, cy)
        self._px = np.ascontiguousarray(px, dtype=float)
        self._py = np.ascontiguousarray(py, dtype=float)
        self.ranges = np.empty((cy.size, 0))

    @property
    def n_free(self) -> int:
        return self.cell_y.size

    @property
    def n_columns(self) -> int:
        return self.ranges.shape[1]

    def columns(self, angles: np.ndarray) -> np.ndarray:
        """Column indices for snapped world angles, casting any missing ones."""
        angles = np.asarray(angles, dtype=float)
        flat = angles.ravel()
        missing = [a for a in dict.fromkeys(flat.tolist()) if a not in self._columns]
        if missing:
            self._extend(missing)
        idx = np.fromiter((self._columns[a] for a in flat.tolist()), dtype=np.int64, count=flat.size)
        return idx.reshape(angles.shape)

    def try_columns(self, angles: np.ndarray) -> np.ndarray | None:
        """Like :meth:`columns`, but None if the new columns would exceed ``max_bytes``."""
        flat = np.asarray(angles, dtype=float).ravel().tolist()
        n_new = len({a for a in flat if a not in self._columns})
        if n_new and (self.n_columns + n_new) * self.n_free * 8 > self.max_bytes:
            return None
        return self.columns(angles)

    def _extend(self, new_angles: list[float]) -> None:
        dirs = [_direction(a) for a in new_angles]
        dirx = np.array([d[0] for d in dirs])
        diry = np.array([d[1] for d in dirs])
        block = np.empty((self.n_free, len(new_angles)))
        if self.n_free:
            g = self.grid
            _kernels.range_table(
                g._codes, g.origin[0], g.origin[1], g.resolution,
                self._px, self._py, dirx, diry, float(self.max_range), block,
            )
        start = self.n_columns
        if start == 0:
            self.ranges = block
        else:
            self.ranges = np.ascontiguousarray(np.concatenate([self.ranges, block], axis=1))
        for n, a in enumerate(new_angles):
            self._columns[a] = start + n
