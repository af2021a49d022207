"""Depth observations and the Laplace observation likelihood over the pose grid."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .errors import EmptyFreeSpace, LengthMismatch, MalformedFile
from .floorplan import DEFAULT_MAX_RANGE, OccupancyGrid, RangeTable, bin_centers, world_angles
from .gravity import CameraModel

log = logging.getLogger(__name__)

B_MIN = 0.01  # meters; smallest admissible Laplace scale


@dataclass(frozen=True, eq=False)
class ColumnPrediction:
    """Per-column depth and Laplace scale predicted for one image.

    With ``D`` entries for a ``W`` pixel wide camera, entry ``i`` describes the
    pixel column centered at ``(i + 0.5) * W / D`` (``D == W`` is one entry
    per pixel column).
    """

    depths: np.ndarray
    scales: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        b = np.asarray(self.scales, dtype=float)
        if d.ndim != 1 or d.shape != b.shape or d.size == 0:
            raise LengthMismatch(f"depths {d.shape} and scales {b.shape} must be equal 1D")
        object.__setattr__(self, "depths", d)
        object.__setattr__(self, "scales", np.maximum(b, B_MIN))

    @property
    def angles(self) -> np.ndarray:
        """Viewing angle of each entry (radians, positive to the right)."""
        D = self.depths.size
        W = self.camera.width
        centers = (np.arange(D) + 0.5) * W / D
        return np.arctan((centers - self.camera.cx) / self.camera.fx)


@dataclass(frozen=True, eq=False)
class DepthObservation:
    """Depth rays for one frame: angles relative to heading, depth, scale, validity."""

    ray_angles: np.ndarray
    depths: np.ndarray
    scales: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.ray_angles, dtype=float).ravel()
        d = np.array(self.depths, dtype=float).ravel()
        b = np.array(self.scales, dtype=float).ravel()
        v = np.ones(a.size, dtype=bool) if self.valid is None else np.array(self.valid, dtype=bool).ravel()
        if not (a.size == d.size == b.size == v.size):
            raise LengthMismatch(f"ray arrays differ in length: {a.size}, {d.size}, {b.size}, {v.size}")
        if np.any(np.abs(a) >= np.pi / 2):
            raise ValueError("ray angles must lie in (-pi/2, pi/2)")
        v = v & np.isfinite(d) & np.isfinite(b)
        b = np.where(np.isfinite(b), np.maximum(b, B_MIN), B_MIN)
        for name, arr in (("ray_angles", a), ("depths", d), ("scales", b), ("valid", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_rays(self) -> int:
        return self.ray_angles.size

    def to_dict(self, frame: int) -> dict:
        return {
            "frame": int(frame),
            "angles": self.ray_angles.tolist(),
            "depths": [float(x) if np.isfinite(x) else None for x in self.depths],
            "scales": self.scales.tolist(),
            "valid": self.valid.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DepthObservation":
        depths = [np.nan if x is None else x for x in doc["depths"]]
        return cls(doc["angles"], depths, doc["scales"], doc.get("valid"))


@dataclass(frozen=True, eq=False)
class LikelihoodVolume:
    """Log-likelihood per (orientation bin, row, column); -inf off free space."""

    log_values: np.ndarray
    resolution: float
    origin: tuple[float, float]
    n_theta: int
    no_valid_rays: bool = False
    # entries outside this mask were not evaluated (left at -inf)
    support: np.ndarray | None = field(default=None, repr=False)


def column_angle(camera: CameraModel, u) -> float:
    """Bearing of pixel column ``u``: ``atan((u + 0.5 - cx) / fx)``."""
    return np.arctan((np.asarray(u, dtype=float) + 0.5 - camera.cx) / camera.fx)


def equiangular_rays(fov: float, n_rays: int) -> np.ndarray:
    """``n_rays`` angles evenly spaced over ``fov``, half a spacing in from each edge."""
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    step = fov / n_rays
    return -fov / 2.0 + (np.arange(n_rays) + 0.5) * step


def resample_to_rays(pred: ColumnPrediction, n_rays: int) -> DepthObservation:
    """Linearly interpolate column depths and scales at equiangular ray angles.

    Rays outside the span of the column angles are marked invalid.
    """
    alphas = equiangular_rays(pred.camera.hfov, n_rays)
    col = pred.angles
    inside = (alphas >= col[0]) & (alphas <= col[-1])
    if col.size == 1:
        inside = np.isclose(alphas, col[0])
    depths = np.interp(alphas, col, pred.depths)
    scales = np.interp(alphas, col, pred.scales)
    depths = np.where(inside, depths, np.nan)
    return DepthObservation(alphas, depths, scales, inside)


def _ray_terms(obs: DepthObservation, uncertainty: str, fixed_scale: float | None):
    sel = obs.valid
    alphas = obs.ray_angles[sel]
    depth = obs.depths[sel]
    if uncertainty == "per-ray":
        b = obs.scales[sel]
    elif uncertainty == "fixed":
        if fixed_scale is None:
            raise ValueError("fixed uncertainty mode needs fixed_scale")
        b = np.full(alphas.size, max(float(fixed_scale), B_MIN))
    else:
        raise ValueError(f"unknown uncertainty mode {uncertainty!r}")
    return alphas, depth, b


def log_likelihood_volume(
    grid: OccupancyGrid,
    obs: DepthObservation,
    n_theta: int = 36,
    max_range: float = DEFAULT_MAX_RANGE,
    uncertainty: str = "per-ray",
    fixed_scale: float | None = None,
    *,
    table: RangeTable | None = None,
    support: np.ndarray | None = None,
) -> LikelihoodVolume:
    """Sum over valid rays of Laplace log densities at every free pose.

    Each pose sits at a free cell center and an orientation bin center.
    A ray whose floorplan cast has no hit is scored as a residual of
    ``max_range``. ``uncertainty="fixed"`` replaces every scale by
    ``fixed_scale``. With ``support`` (bool, volume shaped) only those
    entries are evaluated. A shared ``table`` reuses cached casts; without
    one (or when it is over its size budget) every ray is cast directly.
    """
    if support is None:
        prior = np.broadcast_to(np.zeros((1, 1, 1)), (n_theta, grid.height_cells, grid.width_cells))
        box = (0, grid.height_cells, 0, grid.width_cells)
    else:
        prior = np.where(support, 0.0, -np.inf)
        box = _kernels.live_bbox(prior)
    lik = likelihood_on_prior(grid, obs, prior, box, max_range, uncertainty, fixed_scale, table=table)
    return LikelihoodVolume(lik.log_values, lik.resolution, lik.origin, n_theta, lik.no_valid_rays, support)


def likelihood_on_prior(
    grid: OccupancyGrid,
    obs: DepthObservation,
    prior: np.ndarray,
    box: tuple[int, int, int, int],
    max_range: float = DEFAULT_MAX_RANGE,
    uncertainty: str = "per-ray",
    fixed_scale: float | None = None,
    *,
    table: RangeTable | None = None,
) -> LikelihoodVolume:
    """Like :func:`log_likelihood_volume`, evaluated where ``prior > -inf``.

    ``box`` is a half-open ``(y0, y1, x0, x1)`` window containing every such
    entry. Used by the filter to skip poses it already ruled out.
    """
    n_theta = prior.shape[0]
    if n_theta < 1:
        raise ValueError("n_theta must be >= 1")
    if table is not None and (table.grid is not grid or table.max_range != max_range):
        raise ValueError("range table was built for a different grid or max_range")
    free = ~grid.occupied
    if not free.any():
        raise EmptyFreeSpace("grid has no free cell")

    out = np.full(prior.shape, -np.inf)
    alphas, depth, b = _ray_terms(obs, uncertainty, fixed_scale)
    if alphas.size == 0:
        log.warning("observation has no valid rays; likelihood is flat")
        out[:, free] = 0.0
        return LikelihoodVolume(out, grid.resolution, grid.origin, n_theta, True)

    world = world_angles(bin_centers(n_theta)[:, None], alphas[None, :])
    cos_a = np.array([math.cos(a) for a in alphas])
    log_norm = np.array([-math.log(2.0 * x) for x in b])
    inv_b = 1.0 / b
    miss = log_norm - max_range * inv_b
    box = np.array(box, dtype=np.int64)
    col = table.try_columns(world) if table is not None else None
    if col is not None:
        _kernels.loglik(
            table.ranges, table.cell_y, table.cell_x, col, cos_a, depth, inv_b, log_norm, miss, prior, box, out
        )
    else:
        # same directions the table would cast along
        dirx = np.array([[math.cos(a) for a in row] for row in world.tolist()]).reshape(world.shape)
        diry = np.array([[math.sin(a) for a in row] for row in world.tolist()]).reshape(world.shape)
        _kernels.loglik_direct(
            grid._codes, grid.origin[0], grid.origin[1], grid.resolution, dirx, diry, float(max_range),
            cos_a, depth, inv_b, log_norm, miss, prior, box, out,
        )
    return LikelihoodVolume(out, grid.resolution, grid.origin, n_theta)


def laplace_nll(pred: ColumnPrediction, gt_depths, valid=None) -> float:
    """Laplace negative log-likelihood of ground-truth depths, summed over columns.

    ``sum(log(b) + |d_hat - d| / b)``; the constant ``log 2`` per column is
    omitted. Columns with non-finite ground truth or ``valid == False`` are
    skipped.
    """
    gt = np.asarray(gt_depths, dtype=float)
    if gt.shape != pred.depths.shape:
        raise LengthMismatch(f"{gt.size} ground-truth depths for {pred.depths.size} columns")
    keep = np.isfinite(gt)
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)
    b = pred.scales[keep]
    return float(np.sum(np.log(b) + np.abs(pred.depths[keep] - gt[keep]) / b))


# ------------------------------------------------------------------- JSONL


def write_observations(path: str | Path, observations: Iterable[DepthObservation | None]) -> None:
    """One JSON object per line; frames without an observation are skipped."""
    with open(path, "w") as fh:
        for i, obs in enumerate(observations):
            if obs is not None:
                fh.write(json.dumps(obs.to_dict(i)) + "\n")


def iter_observations(path: str | Path) -> Iterator[tuple[int, DepthObservation]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                yield int(doc["frame"]), DepthObservation.from_dict(doc)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from exc


def read_observations(path: str | Path, n_frames: int | None = None) -> list[DepthObservation | None]:
    """Frame-indexed list; frames missing from the file are None."""
    items = dict(iter_observations(path))
    n = (max(items) + 1 if items else 0) if n_frames is None else n_frames
    return [items.get(i) for i in range(n)]
