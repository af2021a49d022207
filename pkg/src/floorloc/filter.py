"""Histogram Bayes filter over (orientation bin, row, column) pose cells.

The belief is stored as log-probabilities in an array of shape
``(n_theta, height_cells, width_cells)``; occupied cells always hold -inf.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .errors import AllZeroPosterior, EmptyFreeSpace, LengthMismatch
from .floorplan import DEFAULT_MAX_RANGE, OccupancyGrid, Pose2, RangeTable, bin_centers, wrap_angle
from .observation import DepthObservation, LikelihoodVolume, likelihood_on_prior

DEFAULT_SIGMA = (0.1, 0.1, 0.05)

# shifts this close to an integer number of cells/bins are treated as exact
_INTEGRAL_TOL = 1e-9


@dataclass(frozen=True)
class MotionInput:
    """Relative motion in the previous pose's frame plus transition noise std devs."""

    t: tuple[float, float, float]
    sigma: tuple[float, float, float] = DEFAULT_SIGMA

    def __post_init__(self):
        tx, ty, tphi = (float(v) for v in self.t)
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != 3 or any(not (s >= 0) for s in sigma):
            raise ValueError(f"sigma must be three values >= 0, got {self.sigma}")
        object.__setattr__(self, "t", (tx, ty, wrap_angle(tphi)))
        object.__setattr__(self, "sigma", sigma)


@dataclass(eq=False)
class BeliefVolume:
    """Log-probabilities over (orientation bin, row, column).

    ``bbox`` is a half-open ``(y0, y1, x0, x1)`` window outside of which every
    entry is -inf; it is computed on first use when not supplied.
    """

    log_values: np.ndarray
    grid: OccupancyGrid
    bbox: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.bbox is None:
            self.bbox = tuple(int(v) for v in _kernels.live_bbox(self.log_values))

    @property
    def n_theta(self) -> int:
        return self.log_values.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.log_values.shape

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def live(self) -> np.ndarray:
        """View of ``log_values`` restricted to ``bbox``."""
        y0, y1, x0, x1 = self.bbox
        return self.log_values[:, y0:y1, x0:x1]

    def total_mass(self) -> float:
        return float(np.exp(_kernels.logsumexp3(self.live)))

    def entropy(self) -> float:
        lv = self.live
        finite = lv > -np.inf
        p = np.exp(lv[finite])
        return float(-np.sum(p * lv[finite]))

    def support_size(self) -> int:
        return int(np.count_nonzero(self.live > -np.inf))

    def xy_max_marginal(self) -> np.ndarray:
        """Max over orientation of the probabilities, shape (ny, nx)."""
        return np.exp(self.log_values.max(axis=0))

    def pose_of(self, k: int, j: int, i: int) -> Pose2:
        x, y = self.grid.cell_center(i, j)
        return Pose2(float(x), float(y), float(bin_centers(self.n_theta)[k]))

    def copy(self) -> "BeliefVolume":
        return BeliefVolume(self.log_values.copy(), self.grid, self.bbox)


@dataclass(frozen=True)
class FrameSummary:
    frame: int
    map_pose: Pose2
    map_prob: float
    entropy: float
    support: int
    observed: bool
    timings: dict = field(default_factory=dict, compare=False)


def init_uniform(grid: OccupancyGrid, n_theta: int = 36) -> BeliefVolume:
    """Equal mass on every (free cell, orientation bin)."""
    if n_theta < 1:
        raise ValueError("n_theta must be >= 1")
    free = ~grid.occupied
    n = int(free.sum()) * n_theta
    if n == 0:
        raise EmptyFreeSpace("grid has no free cell")
    lv = np.where(free[None, :, :], -math.log(n), -np.inf)
    return BeliefVolume(np.ascontiguousarray(np.broadcast_to(lv, (n_theta,) + free.shape)), grid)


def _window(belief: BeliefVolume, reach_y: int = 0, reach_x: int = 0) -> tuple[slice, slice, tuple]:
    y0, y1, x0, x1 = belief.bbox
    ny, nx = belief.shape[1:]
    box = (max(0, y0 - reach_y), min(ny, y1 + reach_y), max(0, x0 - reach_x), min(nx, x1 + reach_x))
    return slice(box[0], box[1]), slice(box[2], box[3]), box


# ----------------------------------------------------------------- kernels


def _gaussian_taps(std: float) -> np.ndarray:
    """Discrete Gaussian over integer offsets |k| <= 3*std, normalized; [1] if std == 0."""
    if std <= 0:
        return np.ones(1)
    r = int(math.floor(3.0 * std))
    k = np.arange(-r, r + 1)
    w = np.exp(-0.5 * (k / std) ** 2)
    return w / w.sum()


def _shift_taps(d: float) -> tuple[int, np.ndarray]:
    """Bilinear split of a shift by ``d`` cells: (first offset, weights)."""
    r = round(d)
    if abs(d - r) <= _INTEGRAL_TOL:
        return int(r), np.ones(1)
    i0 = math.floor(d)
    f = d - i0
    return i0, np.array([1.0 - f, f])


def _motion_kernel(d: float, std: float) -> tuple[int, np.ndarray]:
    off, shift = _shift_taps(d)
    g = _gaussian_taps(std)
    return off - (g.size - 1) // 2, np.convolve(shift, g)


def _is_identity(off: int, w: np.ndarray) -> bool:
    return off == 0 and w.size == 1 and w[0] == 1.0


def _pack(kernels: list[tuple[int, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Stack kernels into (weights, lengths, offsets, reach)."""
    width = max(w.size for _, w in kernels)
    weights = np.zeros((len(kernels), width))
    lengths = np.empty(len(kernels), dtype=np.int64)
    offsets = np.empty(len(kernels), dtype=np.int64)
    for n, (off, w) in enumerate(kernels):
        weights[n, : w.size] = w
        lengths[n] = w.size
        offsets[n] = off
    reach = max(max(-off, off + w.size - 1) for off, w in kernels)
    return weights, lengths, offsets, max(reach, 0)


def _normalize_in_place(lv: np.ndarray) -> None:
    z = _kernels.logsumexp3(lv)
    if z == -np.inf:
        raise AllZeroPosterior("belief has no mass left")
    _kernels.shift_and_prune(lv, z, -np.inf)


def _embed(sub: np.ndarray, shape, ys: slice, xs: slice) -> np.ndarray:
    out = np.full(shape, -np.inf)
    out[:, ys, xs] = sub
    return out


def transition_update(belief: BeliefVolume, motion: MotionInput) -> BeliefVolume:
    """Prediction step: translate, blur, rotate, blur; then renormalize.

    Translation is handled per orientation bin: the body-frame motion is
    rotated by the bin center, split bilinearly over neighbouring cells and
    blurred by a 3-sigma truncated Gaussian. The orientation axis is then
    shifted circularly by ``t_phi`` (bilinear over two bins) and blurred by a
    wrapped truncated Gaussian.
    """
    grid = belief.grid
    res = grid.resolution
    tx, ty, tphi = motion.t
    sx, sy, sphi = motion.sigma
    n_theta = belief.n_theta

    phis = bin_centers(n_theta)
    kx, ky = [], []
    for phi in phis:
        c, s = math.cos(phi), math.sin(phi)
        kx.append(_motion_kernel((c * tx - s * ty) / res, sx / res))
        ky.append(_motion_kernel((s * tx + c * ty) / res, sy / res))
    bin_width = 2.0 * math.pi / n_theta
    k_off, k_w = _motion_kernel(tphi / bin_width, sphi / bin_width)

    translate = not all(_is_identity(*a) and _is_identity(*b) for a, b in zip(kx, ky))
    rotate = not _is_identity(k_off, k_w)
    if not translate and not rotate:
        return belief.copy()

    if translate:
        wx, lx, offx, reach_x = _pack(kx)
        wy, ly, offy, reach_y = _pack(ky)
    else:
        reach_x = reach_y = 0
    ys, xs, box = _window(belief, reach_y, reach_x)
    src = np.ascontiguousarray(belief.log_values[:, ys, xs])
    m = src.max(axis=(1, 2))
    live = m > -np.inf
    m = np.where(live, m, 0.0)
    lin = np.exp(src - m[:, None, None])
    if translate:
        pushed = np.empty_like(lin)
        _kernels.translate(lin, wx, lx, offx, wy, ly, offy, pushed)
        lin = pushed
    if rotate:
        offr = (k_off + np.arange(k_w.size)).astype(np.int64)
        srcs = (np.arange(n_theta)[:, None] - offr[None, :]) % n_theta
        src_m = np.where(live[srcs], m[srcs], -np.inf)
        new_m = src_m.max(axis=1)
        new_m = np.where(new_m > -np.inf, new_m, 0.0)
        scale = np.where(live[srcs], k_w[None, :] * np.exp(src_m - new_m[:, None]), 0.0)
        mixed = np.empty_like(lin)
        _kernels.mix_bins(lin, scale, offr, mixed)
        lin, m = mixed, new_m
    with np.errstate(divide="ignore"):
        lv = np.log(lin)
    lv += m[:, None, None]
    lv[:, grid.occupied[ys, xs]] = -np.inf
    _normalize_in_place(lv)
    return BeliefVolume(_embed(lv, belief.shape, ys, xs), grid, box)


def observation_update(
    belief: BeliefVolume, lik: LikelihoodVolume, prune_below: float | None = None
) -> BeliefVolume:
    """Correction step: add log-likelihood, renormalize.

    With ``prune_below`` set, entries more than that many nats below the
    posterior maximum are dropped (set to probability zero) and the volume
    is renormalized again.
    """
    if lik.log_values.shape != belief.shape:
        raise LengthMismatch(f"likelihood {lik.log_values.shape} vs belief {belief.shape}")
    ys, xs, box = _window(belief)
    lv = np.empty((belief.n_theta, box[1] - box[0], box[3] - box[2]))
    _kernels.add_and_mask(
        belief.log_values[:, ys, xs], lik.log_values[:, ys, xs], belief.grid.occupied[ys, xs], lv
    )
    z = _kernels.logsumexp3(lv)
    if z == -np.inf:
        raise AllZeroPosterior("observation is incompatible with every pose the prior allows")
    if prune_below is None:
        _kernels.shift_and_prune(lv, z, -np.inf)
    else:
        _kernels.shift_and_prune(lv, z, float(lv.max()) - z - prune_below)
        _normalize_in_place(lv)
        y0, y1, x0, x1 = _kernels.live_bbox(lv)
        lv = lv[:, y0:y1, x0:x1]
        box = (box[0] + y0, box[0] + y1, box[2] + x0, box[2] + x1)
        ys, xs = slice(box[0], box[1]), slice(box[2], box[3])
    return BeliefVolume(_embed(lv, belief.shape, ys, xs), belief.grid, box)


def map_pose(belief: BeliefVolume) -> tuple[Pose2, float]:
    """Center of the most probable cell/bin; ties go to the smallest (k, j, i)."""
    # the window keeps lexicographic (k, j, i) order, so argmax ties agree
    lv = belief.live
    k, j, i = np.unravel_index(int(np.argmax(lv)), lv.shape)
    j += belief.bbox[0]
    i += belief.bbox[2]
    return belief.pose_of(int(k), int(j), int(i)), float(np.exp(belief.log_values[k, j, i]))


def summarize(belief: BeliefVolume, frame: int, observed: bool, timings: dict | None = None) -> FrameSummary:
    pose, prob = map_pose(belief)
    return FrameSummary(frame, pose, prob, belief.entropy(), belief.support_size(), observed, timings or {})


def iter_sequence(
    grid: OccupancyGrid,
    observations: Sequence[DepthObservation | None],
    motions: Sequence[MotionInput | None],
    n_theta: int = 36,
    obs_interval: int = 1,
    *,
    max_range: float = DEFAULT_MAX_RANGE,
    uncertainty: str = "per-ray",
    fixed_scale: float | None = None,
    prune_below: float | None = None,
    table: RangeTable | None = None,
    range_cache: bool = True,
    belief: BeliefVolume | None = None,
    start_frame: int = 0,
    clock=None,
) -> Iterator[tuple[BeliefVolume, FrameSummary]]:
    """Yield the belief and its summary after every frame.

    Frame ``i`` applies ``motions[i]`` (None = no motion) and then, when
    ``i % obs_interval == 0`` and ``observations[i]`` is not None, the
    observation update. ``start_frame`` offsets ``i`` when continuing a run
    from an intermediate ``belief``. Floorplan casts are cached in ``table``
    (built here unless ``range_cache`` is False, in which case every
    likelihood casts its rays directly).
    """
    if len(observations) != len(motions):
        raise LengthMismatch(f"{len(observations)} observations vs {len(motions)} motions")
    if obs_interval < 1:
        raise ValueError("obs_interval must be >= 1")
    if belief is None:
        belief = init_uniform(grid, n_theta)
    elif belief.grid is not grid and belief.grid != grid:
        raise ValueError("belief was built on a different grid")
    if table is None and range_cache:
        table = RangeTable(grid, max_range)
    if clock is None:
        clock = time.perf_counter

    for n, (obs, motion) in enumerate(zip(observations, motions)):
        frame = start_frame + n
        timings = {}
        t0 = clock()
        if motion is not None:
            belief = transition_update(belief, motion)
        t1 = clock()
        timings["transition"] = t1 - t0
        observed = obs is not None and frame % obs_interval == 0
        if observed:
            lik = likelihood_on_prior(
                grid, obs, belief.log_values, belief.bbox, max_range, uncertainty, fixed_scale, table=table
            )
            t2 = clock()
            belief = observation_update(belief, lik, prune_below)
            t3 = clock()
            timings["matching"] = t2 - t1
            timings["update"] = t3 - t2
        yield belief, summarize(belief, frame, observed, timings)


def run_sequence(grid, observations, motions, n_theta: int = 36, obs_interval: int = 1, **kwargs):
    """Run the filter over a whole sequence.

    Returns ``(summaries, final_belief)``; see :func:`iter_sequence` for the
    keyword options.
    """
    summaries = []
    belief = kwargs.get("belief")
    for belief, summary in iter_sequence(grid, observations, motions, n_theta, obs_interval, **kwargs):
        summaries.append(summary)
    if belief is None:
        belief = init_uniform(grid, n_theta)
    return summaries, belief
