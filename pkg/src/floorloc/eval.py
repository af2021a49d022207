"""Localization metrics: sequence success, windowed RMSE and single-frame recall."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, TooShort
from .floorplan import Pose2, wrap_angle

# (meters, optional degrees)
DEFAULT_RECALL_THRESHOLDS = ((0.1, None), (0.5, None), (1.0, None), (1.0, 30.0), (2.0, None), (5.0, None), (10.0, None))


def _check(est: Sequence[Pose2], gt: Sequence[Pose2], window: int | None = None):
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimates vs {len(gt)} ground-truth poses")
    if window is not None:
        if window < 1:
            raise ValueError("window must be >= 1")
        if len(est) < window:
            raise TooShort(f"sequence of {len(est)} frames is shorter than window {window}")


def position_errors(est: Sequence[Pose2], gt: Sequence[Pose2]) -> np.ndarray:
    _check(est, gt)
    return np.array([math.hypot(e.x - g.x, e.y - g.y) for e, g in zip(est, gt)], dtype=float)


def heading_errors(est: Sequence[Pose2], gt: Sequence[Pose2]) -> np.ndarray:
    """Absolute wrapped heading error in degrees, in [0, 180]."""
    _check(est, gt)
    return np.array([abs(math.degrees(wrap_angle(e.phi - g.phi))) for e, g in zip(est, gt)], dtype=float)


def sequence_success(est, gt, threshold_m: float = 1.0, window: int = 10) -> bool:
    """True iff each of the last ``window`` position errors is <= ``threshold_m``."""
    _check(est, gt, window)
    return bool(np.all(position_errors(est[-window:], gt[-window:]) <= threshold_m))


def rmse_window(est, gt, window: int = 10) -> float:
    _check(est, gt, window)
    e = position_errors(est[-window:], gt[-window:])
    return float(np.sqrt(np.mean(e**2)))


def threshold_label(meters: float, degrees: float | None = None) -> str:
    label = f"{meters:g}m"
    return label if degrees is None else f"{label} {degrees:g}deg"


def single_frame_recall(results, thresholds=DEFAULT_RECALL_THRESHOLDS) -> dict[str, float]:
    """Fraction of ``(est, gt)`` pairs within each threshold.

    A threshold is ``(meters, degrees)``; ``degrees=None`` checks position
    only. Keys are labels such as ``"1m"`` and ``"1m 30deg"``.
    """
    if len(results) == 0:
        raise ValueError("no results to score")
    est = [r[0] for r in results]
    gt = [r[1] for r in results]
    pos = position_errors(est, gt)
    head = heading_errors(est, gt)
    table = {}
    for th in thresholds:
        meters, degrees = (th[0], th[1] if len(th) > 1 else None) if isinstance(th, (tuple, list)) else (th, None)
        hit = pos <= meters
        if degrees is not None:
            hit &= head <= degrees
        table[threshold_label(meters, degrees)] = float(np.mean(hit))
    return table


@dataclass(frozen=True, eq=False)
class SequenceResult:
    est_poses: list
    gt_poses: list
    threshold_m: float = 1.0
    window: int = 10

    def __post_init__(self):
        _check(self.est_poses, self.gt_poses, self.window)

    @property
    def per_frame_error(self) -> np.ndarray:
        return position_errors(self.est_poses, self.gt_poses)

    @property
    def success(self) -> bool:
        return sequence_success(self.est_poses, self.gt_poses, self.threshold_m, self.window)

    @property
    def rmse_window(self) -> float:
        return rmse_window(self.est_poses, self.gt_poses, self.window)

    def prefix(self, length: int) -> "SequenceResult":
        """Result of the first ``length`` frames (valid for causal filters)."""
        return SequenceResult(self.est_poses[:length], self.gt_poses[:length], self.threshold_m, self.window)


def pooled_rmse(results: Sequence[SequenceResult]) -> float | None:
    """RMSE over the last-window errors of all given sequences; None if empty."""
    if not results:
        return None
    sq = np.concatenate([r.per_frame_error[-r.window :] ** 2 for r in results])
    return float(np.sqrt(np.mean(sq)))


def success_summary(results: Sequence[SequenceResult]) -> dict:
    """Success rate and RMSE over successful and over all sequences."""
    succ = [r for r in results if r.success]
    return {
        "n": len(results),
        "n_success": len(succ),
        "success_rate": len(succ) / len(results) if results else None,
        "rmse_succ": pooled_rmse(succ),
        "rmse_all": pooled_rmse(list(results)),
    }
