"""Floorplan localization: depth-ray likelihoods and a histogram Bayes filter over SE(2)."""

__version__ = "0.1.0"

from .errors import FloorlocError  # noqa: E402
from .filter import BeliefVolume, MotionInput, init_uniform, map_pose, observation_update, run_sequence, transition_update  # noqa: E402
from .floorplan import OccupancyGrid, Pose2, RangeTable, cast_ray, floorplan_depth, load_grid, save_grid  # noqa: E402
from .gravity import CameraModel, alignment_homography  # noqa: E402
from .observation import ColumnPrediction, DepthObservation, log_likelihood_volume, resample_to_rays  # noqa: E402
from .estimator import FloorplanLocalizer  # noqa: E402

__all__ = [
    "BeliefVolume",
    "CameraModel",
    "ColumnPrediction",
    "DepthObservation",
    "FloorlocError",
    "FloorplanLocalizer",
    "MotionInput",
    "OccupancyGrid",
    "Pose2",
    "RangeTable",
    "alignment_homography",
    "cast_ray",
    "floorplan_depth",
    "init_uniform",
    "load_grid",
    "log_likelihood_volume",
    "map_pose",
    "observation_update",
    "resample_to_rays",
    "run_sequence",
    "save_grid",
    "transition_update",
]
