"""Procedural floorplans, trajectories and noisy depth observers.

Random streams
--------------
Map and trajectory generation use numpy's PCG64 seeded through
``SeedSequence``. Observation noise uses a counter-based generator so any
single draw can be reproduced from ``(seed, stream, frame, ray)`` alone::

    h = splitmix64(seed)
    h = splitmix64(h ^ stream)
    h = splitmix64(h ^ frame)
    h = splitmix64(h ^ ray)
    u = ((h >> 11) + 0.5) * 2**-53          # uniform in (0, 1)

where ``splitmix64(x)`` is the standard finalizer of Steele et al.'s
SplitMix64 applied to ``x + 0x9E3779B97F4A7C15`` (all arithmetic mod 2**64).
Laplace draws use the inverse CDF ``-b * sign(u - .5) * log(1 - 2|u - .5|)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import MalformedFile, StuckTrajectory
from .filter import DEFAULT_SIGMA, MotionInput
from .floorplan import DEFAULT_MAX_RANGE, OccupancyGrid, Pose2, floorplan_depth, wrap_angle
from .gravity import CameraModel
from .observation import B_MIN, DepthObservation, equiangular_rays

TRAJECTORY_VERSION = 1

# stream ids of the counter-based generator
STREAM_DEPTH = 1
STREAM_CORRUPT = 2
STREAM_SECTOR = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x) -> np.ndarray:
    """SplitMix64 output function on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, stream: int, frame: int, ray) -> np.ndarray:
    """Uniform (0, 1) draws keyed by (seed, stream, frame, ray); ``ray`` may be an array."""
    with np.errstate(over="ignore"):
        h = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        h = splitmix64(h ^ np.uint64(stream))
        h = splitmix64(h ^ np.uint64(frame))
        h = splitmix64(h ^ np.asarray(ray, dtype=np.uint64))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def laplace_from_uniform(u, scale) -> np.ndarray:
    """Inverse-CDF Laplace(0, scale) sample for uniforms in (0, 1)."""
    c = np.asarray(u, dtype=float) - 0.5
    return -np.asarray(scale, dtype=float) * np.sign(c) * np.log1p(-2.0 * np.abs(c))


# ------------------------------------------------------------------ noise


@dataclass(frozen=True)
class NoiseModel:
    """How a synthetic observer perturbs true floorplan depths.

    ``calibration`` is ``"oracle"`` (report the generating scale), ``"fixed"``
    (report ``calibration_value`` everywhere) or ``"miscalibrated"`` (report
    the generating scale times ``calibration_value``). ``corruption`` picks
    which rays use ``corrupt_scale``: ``"iid"`` flips a coin per ray,
    ``"sector"`` corrupts one contiguous run of ``round(corrupt_prob * n)``
    rays per frame at a random offset. ``base_scale == 0`` gives exact depths.
    """

    base_scale: float = 0.1
    corrupt_prob: float = 0.0
    corrupt_scale: float = 2.0
    calibration: str = "oracle"
    calibration_value: float = 1.0
    corruption: str = "sector"
    rng_seed: int = 0

    def __post_init__(self):
        if self.base_scale != 0 and self.base_scale < B_MIN:
            raise ValueError(f"base_scale must be 0 or >= {B_MIN}")
        if self.corrupt_scale < B_MIN:
            raise ValueError(f"corrupt_scale must be >= {B_MIN}")
        if not 0.0 <= self.corrupt_prob <= 1.0:
            raise ValueError("corrupt_prob must lie in [0, 1]")
        if self.calibration not in ("oracle", "fixed", "miscalibrated"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if not self.calibration_value > 0:
            raise ValueError("calibration_value must be > 0")
        if self.corruption not in ("iid", "sector"):
            raise ValueError(f"unknown corruption mode {self.corruption!r}")

    @classmethod
    def ground_truth(cls, reported_scale: float) -> "NoiseModel":
        """Exact depths, every ray reported with ``reported_scale``."""
        return cls(base_scale=0.0, corrupt_prob=0.0, calibration="fixed", calibration_value=reported_scale)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        return cls(**doc)


def corrupted_rays(noise: NoiseModel, frame: int, n_rays: int) -> np.ndarray:
    """Boolean mask of rays drawn from the corrupted regime in ``frame``."""
    if noise.corrupt_prob == 0.0 or n_rays == 0:
        return np.zeros(n_rays, dtype=bool)
    if noise.corruption == "iid":
        u = counter_uniform(noise.rng_seed, STREAM_CORRUPT, frame, np.arange(n_rays))
        return u < noise.corrupt_prob
    width = int(round(noise.corrupt_prob * n_rays))
    u = counter_uniform(noise.rng_seed, STREAM_SECTOR, frame, 0)
    start = min(int(u * (n_rays - width + 1)), n_rays - width)
    mask = np.zeros(n_rays, dtype=bool)
    mask[start : start + width] = True
    return mask


def perturb(true_depths, noise: NoiseModel, frame: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(noisy depths, reported scales, generating scales) for one frame."""
    d = np.asarray(true_depths, dtype=float)
    n = d.size
    bad = corrupted_rays(noise, frame, n)
    true_b = np.where(bad, noise.corrupt_scale, noise.base_scale)
    u = counter_uniform(noise.rng_seed, STREAM_DEPTH, frame, np.arange(n))
    noisy = d + laplace_from_uniform(u, true_b)
    if noise.calibration == "oracle":
        reported = true_b
    elif noise.calibration == "fixed":
        reported = np.full(n, noise.calibration_value)
    else:
        reported = true_b * noise.calibration_value
    return noisy, np.maximum(reported, B_MIN), true_b


def observe(
    grid: OccupancyGrid,
    pose: Pose2,
    camera: CameraModel,
    n_rays: int,
    noise: NoiseModel,
    frame: int = 0,
    max_range: float = DEFAULT_MAX_RANGE,
) -> DepthObservation:
    """Noisy equiangular depth rays seen from ``pose``.

    Rays whose floorplan cast leaves the map are marked invalid.
    """
    alphas = equiangular_rays(camera.hfov, n_rays)
    true = floorplan_depth(grid, pose, alphas, max_range)
    noisy, reported, _ = perturb(np.nan_to_num(true), noise, frame)
    valid = np.isfinite(true)
    return DepthObservation(alphas, np.where(valid, noisy, np.nan), reported, valid)


# ------------------------------------------------------------------- maps


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([k & 0xFFFFFFFF for k in key])))


def _split_rooms(occ, rng, x0, x1, y0, y1, wall, door, min_room, door_x, door_y):
    """Recursively wall off the free rectangle [x0, x1) x [y0, y1) (cells).

    ``door_x`` holds x-intervals of doorways in the rectangle's bottom/top
    walls and ``door_y`` y-intervals in its left/right walls; new walls avoid
    them so every doorway stays open.
    """
    w, h = x1 - x0, y1 - y0
    can_x = w >= 2 * min_room + wall
    can_y = h >= 2 * min_room + wall
    if not (can_x or can_y):
        return
    if can_x and can_y:
        vertical = rng.random() < w / (w + h)
    else:
        vertical = can_x
    lo_edge, hi_edge = (x0, x1) if vertical else (y0, y1)
    blocked = door_x if vertical else door_y
    options = [
        s
        for s in range(lo_edge + min_room, hi_edge - min_room - wall + 1)
        if all(s + wall < a or s > b for a, b in blocked)
    ]
    if not options:
        return
    s = options[int(rng.integers(len(options)))]
    if vertical:
        span = (y0, y1)
        d0 = int(rng.integers(span[0], span[1] - door + 1))
        occ[y0:y1, s : s + wall] = True
        occ[d0 : d0 + door, s : s + wall] = False
        gap = (d0, d0 + door - 1)
        _split_rooms(occ, rng, x0, s, y0, y1, wall, door, min_room, door_x, door_y + [gap])
        _split_rooms(occ, rng, s + wall, x1, y0, y1, wall, door, min_room, door_x, door_y + [gap])
    else:
        d0 = int(rng.integers(x0, x1 - door + 1))
        occ[s : s + wall, x0:x1] = True
        occ[s : s + wall, d0 : d0 + door] = False
        gap = (d0, d0 + door - 1)
        _split_rooms(occ, rng, x0, x1, y0, s, wall, door, min_room, door_x + [gap], door_y)
        _split_rooms(occ, rng, x0, x1, s + wall, y1, wall, door, min_room, door_x + [gap], door_y)


def _add_furniture(occ, rng, n_blocks, res, margin_m=1.0, size_m=(0.4, 1.5)):
    """Drop isolated rectangular blocks that keep ``margin_m`` from all other walls."""
    ny, nx = occ.shape
    clearance = ndimage.distance_transform_edt(~occ)
    margin = int(math.ceil(margin_m / res))
    lo, hi = (max(1, int(round(s / res))) for s in size_m)
    for _ in range(n_blocks * 10):
        if n_blocks == 0:
            break
        bw, bh = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        i = int(rng.integers(0, nx - bw))
        j = int(rng.integers(0, ny - bh))
        # every cell of the block must be farther than margin from existing walls
        if clearance[j : j + bh, i : i + bw].min() <= margin + 1:
            continue
        occ[j : j + bh, i : i + bw] = True
        clearance = ndimage.distance_transform_edt(~occ)
        n_blocks -= 1


def _maze(occ, rng, wall, lane):
    ny, nx = occ.shape
    pitch = wall + lane
    mx = (nx - wall) // pitch
    my = (ny - wall) // pitch
    occ[:] = True
    seen = np.zeros((my, mx), dtype=bool)

    def carve(ci, cj):
        occ[wall + cj * pitch : wall + cj * pitch + lane, wall + ci * pitch : wall + ci * pitch + lane] = False

    stack = [(0, 0)]
    seen[0, 0] = True
    carve(0, 0)
    while stack:
        ci, cj = stack[-1]
        nbrs = [
            (ci + di, cj + dj)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
            if 0 <= ci + di < mx and 0 <= cj + dj < my and not seen[cj + dj, ci + di]
        ]
        if not nbrs:
            stack.pop()
            continue
        ni, nj = nbrs[int(rng.integers(len(nbrs)))]
        seen[nj, ni] = True
        carve(ni, nj)
        # open the wall between the two lanes
        xa = wall + min(ci, ni) * pitch
        ya = wall + min(cj, nj) * pitch
        if ni != ci:
            occ[ya : ya + lane, xa + lane : xa + pitch] = False
        else:
            occ[ya + lane : ya + pitch, xa : xa + lane] = False
        stack.append((ni, nj))


def is_connected(free: np.ndarray) -> bool:
    """True when the free cells form exactly one 4-connected component."""
    _, n = ndimage.label(free)
    return n == 1


def gen_floorplan(
    seed: int,
    extent_m: float = 30.0,
    style: str = "rooms",
    resolution: float = 0.1,
    *,
    wall_m: float = 0.3,
    door_m: float = 1.2,
    min_room_m: float = 3.0,
    lane_m: float = 1.5,
    corridor_width_m: float | None = None,
    furniture: int | None = None,
) -> OccupancyGrid:
    """Square procedural floorplan of side ``extent_m`` with origin (0, 0).

    Styles: ``rooms`` (recursive room partition with one doorway per wall
    plus free-standing blocks), ``maze`` (perfect maze of ``lane_m`` wide
    lanes) and ``corridor`` (one straight corridor along x, by default
    ``0.4 * extent_m`` wide). The outer boundary is always occupied.
    """
    if extent_m < 2.0:
        raise ValueError("extent_m must be >= 2")
    if style not in ("rooms", "maze", "corridor"):
        raise ValueError(f"unknown style {style!r}")
    n = int(round(extent_m / resolution))
    wall = max(1, int(round(wall_m / resolution)))

    for attempt in range(100):
        rng = _rng(seed, attempt)
        occ = np.zeros((n, n), dtype=bool)
        if style == "rooms":
            door = max(1, int(round(door_m / resolution)))
            min_room = max(door + 2, int(round(min_room_m / resolution)))
            _split_rooms(occ, rng, wall, n - wall, wall, n - wall, wall, door, min_room, [], [])
            n_blocks = int(round(extent_m**2 / 60.0)) if furniture is None else furniture
            occ[:wall, :] = occ[-wall:, :] = occ[:, :wall] = occ[:, -wall:] = True
            _add_furniture(occ, rng, n_blocks, resolution)
        elif style == "maze":
            _maze(occ, rng, wall, max(1, int(round(lane_m / resolution))))
        else:
            width_m = 0.4 * extent_m if corridor_width_m is None else corridor_width_m
            cw = min(n - 2 * wall, max(1, int(round(width_m / resolution))))
            occ[:] = True
            y0 = (n - cw) // 2
            occ[y0 : y0 + cw, wall : n - wall] = False
        occ[:wall, :] = occ[-wall:, :] = occ[:, :wall] = occ[:, -wall:] = True
        free = ~occ
        if is_connected(free) and (style == "corridor" or free.mean() >= 0.3):
            return OccupancyGrid(occ, resolution, (0.0, 0.0))
    raise RuntimeError(f"could not generate a valid {style} map for seed {seed}")


# ----------------------------------------------------------- trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """True poses plus measured relative motions (one fewer than poses)."""

    poses: list[Pose2]
    motions: list[MotionInput] = field(default_factory=list)

    def __post_init__(self):
        if len(self.motions) != max(len(self.poses) - 1, 0):
            raise ValueError(f"{len(self.poses)} poses need {len(self.poses) - 1} motions")

    def __len__(self):
        return len(self.poses)

    def frame_motions(self) -> list[MotionInput | None]:
        """Per-frame motion list for the filter: None for frame 0."""
        return [None] + list(self.motions)

    def to_dict(self) -> dict:
        return {
            "format_version": TRAJECTORY_VERSION,
            "poses": [list(p.as_tuple()) for p in self.poses],
            "motions": [{"t": list(m.t), "sigma": list(m.sigma)} for m in self.motions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        if doc.get("format_version") != TRAJECTORY_VERSION:
            raise MalformedFile(f"unsupported trajectory format_version {doc.get('format_version')!r}")
        try:
            poses = [Pose2(*p) for p in doc["poses"]]
            motions = [MotionInput(tuple(m["t"]), tuple(m["sigma"])) for m in doc["motions"]]
        except (KeyError, TypeError) as exc:
            raise MalformedFile(f"bad trajectory document: {exc}") from exc
        return cls(poses, motions)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def clearance_map(grid: OccupancyGrid) -> np.ndarray:
    """Distance in meters from each cell center to the nearest occupied cell center."""
    return ndimage.distance_transform_edt(~grid.occupied) * grid.resolution


def _segment_clear(grid, clear, a, b, min_clear) -> bool:
    n = max(2, int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]) / (0.5 * grid.resolution))) + 1)
    xs = np.linspace(a[0], b[0], n)
    ys = np.linspace(a[1], b[1], n)
    i = np.floor((xs - grid.origin[0]) / grid.resolution).astype(int)
    j = np.floor((ys - grid.origin[1]) / grid.resolution).astype(int)
    inside = (i >= 0) & (i < grid.width_cells) & (j >= 0) & (j < grid.height_cells)
    if not inside.all():
        return False
    return bool(np.all(clear[j, i] >= min_clear))


def gen_trajectory(
    grid: OccupancyGrid,
    seed: int,
    length: int,
    step_mean: float = 0.5,
    motion_noise: tuple[float, float, float] = DEFAULT_SIGMA,
    *,
    turn_std: float = 0.3,
    clearance_m: float = 0.4,
    max_attempts: int = 60,
    max_restarts: int = 20,
) -> Trajectory:
    """Random walk through free space.

    Each step turns by a Gaussian angle then moves forward by
    ``step_mean * U(0.5, 1.5)``, keeping ``clearance_m`` from walls along the
    whole segment. Blocked steps are resampled with growing turn spread; a
    walk that still gets stuck is restarted from a new start pose.
    Measured motions add Gaussian noise of std ``motion_noise`` to the true
    relative motion and carry ``motion_noise`` as their ``sigma``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    sigma = tuple(float(s) for s in motion_noise)
    clear = clearance_map(grid)
    starts = np.argwhere(clear >= clearance_m + 0.5 * grid.resolution)
    if starts.size == 0:
        raise StuckTrajectory(f"no free cell has {clearance_m} m clearance")

    for restart in range(max_restarts):
        rng = _rng(seed, restart)
        j, i = starts[int(rng.integers(len(starts)))]
        cx, cy = grid.cell_center(int(i), int(j))
        jitter = rng.uniform(-0.5, 0.5, size=2) * grid.resolution
        pose = Pose2(cx + jitter[0], cy + jitter[1], rng.uniform(-math.pi, math.pi))
        if not _segment_clear(grid, clear, (pose.x, pose.y), (pose.x, pose.y), clearance_m):
            continue
        poses, motions = [pose], []
        while len(poses) < length:
            for attempt in range(max_attempts):
                spread = min(math.pi, turn_std + attempt * 0.15)
                dphi = float(rng.normal(0.0, spread))
                step = step_mean * float(rng.uniform(0.5, 1.5))
                heading = pose.phi + dphi
                nxt = Pose2(pose.x + step * math.cos(heading), pose.y + step * math.sin(heading), heading)
                if _segment_clear(grid, clear, (pose.x, pose.y), (nxt.x, nxt.y), clearance_m):
                    break
            else:
                break
            true_t = nxt.relative_to(pose)
            noise = rng.normal(0.0, 1.0, size=3) * np.array(sigma)
            measured = (true_t[0] + noise[0], true_t[1] + noise[1], wrap_angle(true_t[2] + noise[2]))
            motions.append(MotionInput(measured, sigma))
            poses.append(nxt)
            pose = nxt
        if len(poses) == length:
            return Trajectory(poses, motions)
    raise StuckTrajectory(f"no {length}-step collision-free walk found after {max_restarts} restarts")


def observe_trajectory(
    grid: OccupancyGrid,
    traj: Trajectory,
    camera: CameraModel,
    n_rays: int,
    noise: NoiseModel,
    max_range: float = DEFAULT_MAX_RANGE,
) -> list[DepthObservation]:
    return [observe(grid, p, camera, n_rays, noise, f, max_range) for f, p in enumerate(traj.poses)]
