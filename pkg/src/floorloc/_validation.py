"""Input checking shared by the estimator and the CLI."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import LengthMismatch
from .filter import MotionInput
from .floorplan import OccupancyGrid
from .observation import DepthObservation


def check_grid(grid, resolution: float | None = None, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Accept an OccupancyGrid, or a 2D bool-like array plus ``resolution``."""
    if isinstance(grid, OccupancyGrid):
        return grid
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise ValueError(f"expected an OccupancyGrid or a 2D array, got shape {arr.shape}")
    if resolution is None:
        raise ValueError("a raw occupancy array needs a resolution")
    return OccupancyGrid(arr.astype(bool), float(resolution), tuple(origin))


def check_observations(observations) -> list[DepthObservation | None]:
    if isinstance(observations, DepthObservation) or not isinstance(observations, Sequence):
        raise TypeError("observations must be a sequence of DepthObservation or None")
    out = list(observations)
    for n, o in enumerate(out):
        if o is not None and not isinstance(o, DepthObservation):
            raise TypeError(f"observations[{n}] is {type(o).__name__}, not DepthObservation")
    return out


def check_motions(motions, n_frames: int, sigma) -> list[MotionInput | None]:
    """Per-frame motions; plain ``(tx, ty, tphi)`` triples get ``sigma``.

    ``None`` means no motion at every frame. A list one shorter than the
    frame count is taken to start at frame 1.
    """
    if motions is None:
        return [None] * n_frames
    out = []
    for m in motions:
        if m is None or isinstance(m, MotionInput):
            out.append(m)
        else:
            t = tuple(float(v) for v in m)
            if len(t) != 3:
                raise ValueError(f"motion must have three components, got {m!r}")
            out.append(MotionInput(t, tuple(sigma)))
    if len(out) == n_frames - 1:
        out = [None] + out
    if len(out) != n_frames:
        raise LengthMismatch(f"{len(out)} motions for {n_frames} frames")
    return out
