"""Estimator-style wrapper around the filter."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_grid, check_motions, check_observations
from .filter import DEFAULT_SIGMA, run_sequence
from .floorplan import DEFAULT_MAX_RANGE, RangeTable


class FloorplanLocalizer(BaseEstimator):
    """Sequential floorplan localizer.

    ``fit`` takes the floorplan and caches floorplan ray casts; ``predict``
    runs the filter over one sequence and returns the MAP pose per frame.

    Parameters
    ----------
    n_theta : int
        Orientation bins.
    max_range : float
        Casts longer than this count as misses.
    uncertainty : {"per-ray", "fixed"}
        Use the observed per-ray scales or one constant ``fixed_scale``.
    fixed_scale : float, optional
    sigma : tuple of 3 floats
        Motion noise for motions given as plain triples.
    obs_interval : int
        Apply observations on every ``obs_interval``-th frame only.
    prune_below : float, optional
        Drop poses this many nats below the best one after each update.
    """

    def __init__(
        self,
        n_theta=36,
        max_range=DEFAULT_MAX_RANGE,
        uncertainty="per-ray",
        fixed_scale=None,
        sigma=DEFAULT_SIGMA,
        obs_interval=1,
        prune_below=300.0,
    ):
        self.n_theta = n_theta
        self.max_range = max_range
        self.uncertainty = uncertainty
        self.fixed_scale = fixed_scale
        self.sigma = sigma
        self.obs_interval = obs_interval
        self.prune_below = prune_below

    def fit(self, grid, y=None, resolution=None):
        if self.n_theta < 1:
            raise ValueError("n_theta must be >= 1")
        if self.uncertainty not in ("per-ray", "fixed"):
            raise ValueError(f"unknown uncertainty mode {self.uncertainty!r}")
        if self.uncertainty == "fixed" and self.fixed_scale is None:
            raise ValueError("uncertainty='fixed' needs fixed_scale")
        self.grid_ = check_grid(grid, resolution)
        self.table_ = RangeTable(self.grid_, self.max_range)
        return self

    def _run(self, observations, motions):
        check_is_fitted(self, "table_")
        obs = check_observations(observations)
        mot = check_motions(motions, len(obs), self.sigma)
        return run_sequence(
            self.grid_,
            obs,
            mot,
            self.n_theta,
            self.obs_interval,
            max_range=self.max_range,
            uncertainty=self.uncertainty,
            fixed_scale=self.fixed_scale,
            prune_below=self.prune_below,
            table=self.table_,
        )

    def predict(self, observations, motions=None) -> np.ndarray:
        """MAP pose per frame as an array of shape (n_frames, 3): x, y, phi."""
        summaries, self.belief_ = self._run(observations, motions)
        return np.array([s.map_pose.as_tuple() for s in summaries]).reshape(-1, 3)

    def transform(self, observations, motions=None) -> np.ndarray:
        """Per-frame (map_prob, entropy, support size) of the posterior."""
        summaries, self.belief_ = self._run(observations, motions)
        return np.array([(s.map_prob, s.entropy, s.support) for s in summaries], dtype=float).reshape(-1, 3)

    def score(self, observations, motions, poses, threshold=1.0) -> float:
        """Fraction of frames whose MAP position is within ``threshold`` meters."""
        est = self.predict(observations, motions)
        gt = np.array([p.as_tuple() if hasattr(p, "as_tuple") else p for p in poses], dtype=float)
        err = np.hypot(est[:, 0] - gt[:, 0], est[:, 1] - gt[:, 1])
        return float(np.mean(err <= threshold))
