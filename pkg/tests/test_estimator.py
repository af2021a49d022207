import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from floorloc import FloorplanLocalizer
from floorloc.errors import LengthMismatch
from floorloc.filter import run_sequence
from floorloc.gravity import CameraModel
from floorloc.synth import NoiseModel, gen_floorplan, gen_trajectory, observe_trajectory

CAM = CameraModel.from_fov(math.radians(80), 160, 120)


@pytest.fixture(scope="module")
def scene():
    grid = gen_floorplan(1, 10.0, "rooms", 0.2)
    traj = gen_trajectory(grid, 3, 20)
    obs = observe_trajectory(grid, traj, CAM, 16, NoiseModel.ground_truth(0.5))
    return grid, traj, obs


class TestParams:
    def test_get_set_params(self):
        est = FloorplanLocalizer(n_theta=12, uncertainty="fixed", fixed_scale=0.4)
        params = est.get_params()
        assert params["n_theta"] == 12 and params["fixed_scale"] == 0.4
        est.set_params(n_theta=24)
        assert est.n_theta == 24
        assert clone(est).get_params() == est.get_params()

    def test_not_fitted(self, scene):
        _, _, obs = scene
        with pytest.raises(NotFittedError):
            FloorplanLocalizer().predict(obs)

    def test_fixed_needs_scale(self, scene):
        with pytest.raises(ValueError):
            FloorplanLocalizer(uncertainty="fixed").fit(scene[0])

    def test_raw_array_needs_resolution(self, scene):
        grid = scene[0]
        with pytest.raises(ValueError):
            FloorplanLocalizer().fit(grid.occupied)
        est = FloorplanLocalizer(n_theta=8).fit(grid.occupied, resolution=grid.resolution)
        assert est.grid_ == grid


class TestPredict:
    def test_matches_filter(self, scene):
        grid, traj, obs = scene
        est = FloorplanLocalizer(n_theta=8).fit(grid)
        got = est.predict(obs, traj.frame_motions())
        summaries, _ = run_sequence(grid, obs, traj.frame_motions(), 8, prune_below=300.0)
        np.testing.assert_array_equal(got, [s.map_pose.as_tuple() for s in summaries])
        assert got.shape == (20, 3)

    def test_plain_triples(self, scene):
        grid, traj, obs = scene
        est = FloorplanLocalizer(n_theta=8, sigma=traj.motions[0].sigma).fit(grid)
        a = est.predict(obs, [m.t for m in traj.motions])
        b = est.predict(obs, traj.frame_motions())
        np.testing.assert_array_equal(a, b)

    def test_transform(self, scene):
        grid, traj, obs = scene
        out = FloorplanLocalizer(n_theta=8).fit(grid).transform(obs, traj.frame_motions())
        assert out.shape == (20, 3)
        assert np.all((out[:, 0] > 0) & (out[:, 0] <= 1))
        assert out[-1, 1] < out[0, 1]

    def test_score(self, scene):
        grid, traj, obs = scene
        est = FloorplanLocalizer().fit(grid)
        s = est.score(obs, traj.frame_motions(), traj.poses)
        assert 0.5 <= s <= 1.0

    def test_bad_inputs(self, scene):
        grid, traj, obs = scene
        est = FloorplanLocalizer(n_theta=8).fit(grid)
        with pytest.raises(TypeError):
            est.predict(obs[0])
        with pytest.raises(LengthMismatch):
            est.predict(obs, traj.frame_motions()[:5])
        with pytest.raises(ValueError):
            est.predict(obs, [(0.1, 0.2)] * 19)
