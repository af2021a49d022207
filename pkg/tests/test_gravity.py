import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from floorloc.errors import DegenerateTilt
from floorloc.gravity import (
    CameraModel,
    alignment_homography,
    mask_pixels,
    rot_x,
    rot_y,
    rotation_cg,
    warp_points,
)

tilt = st.floats(-0.5, 0.5)
CAM = CameraModel.from_fov(math.radians(80), 64, 48)


def oracle_mask(camera, psi, theta):
    """Per-pixel inverse mapping with rotations built from axis-angle vectors.

    In optical coordinates (x right, y down, z forward) roll turns about +z
    and pitch about the left-pointing axis -x.
    """
    r = Rotation.from_rotvec([-theta, 0.0, 0.0]) * Rotation.from_rotvec([0.0, 0.0, psi])
    M = camera.K @ r.as_matrix() @ np.linalg.inv(camera.K)
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    for v in range(camera.height):
        for u in range(camera.width):
            p = M @ np.array([u + 0.5, v + 0.5, 1.0])
            if p[2] <= 0:
                continue
            x, y = p[0] / p[2], p[1] / p[2]
            mask[v, u] = 0 <= x < camera.width and 0 <= y < camera.height
    return mask


class TestRotations:
    def test_identity(self):
        np.testing.assert_array_equal(rotation_cg(0.0, 0.0), np.eye(3))

    def test_single_factor(self):
        np.testing.assert_array_equal(rotation_cg(0.3, 0.0), rot_x(0.3))
        np.testing.assert_array_equal(rotation_cg(0.0, -0.2), rot_y(-0.2))

    def test_standard_elements(self):
        c, s = math.cos(0.4), math.sin(0.4)
        np.testing.assert_allclose(rot_x(0.4), [[1, 0, 0], [0, c, -s], [0, s, c]])
        np.testing.assert_allclose(rot_y(0.4), [[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def test_orthonormal(self):
        rng = np.random.default_rng(0)
        for psi, theta in rng.uniform(-math.pi, math.pi, size=(100, 2)):
            R = rotation_cg(psi, theta)
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


class TestCamera:
    def test_from_fov(self):
        assert CAM.hfov == pytest.approx(math.radians(80))
        assert (CAM.cx, CAM.cy) == (32.0, 24.0)

    def test_k_inverse(self):
        cam = CameraModel(120.0, 90.0, 30.0, 20.0, 64, 48)
        np.testing.assert_allclose(cam.K @ cam.K_inv, np.eye(3), atol=1e-15)

    def test_rejects_bad_focal(self):
        with pytest.raises(ValueError):
            CameraModel(0.0, 1.0, 0, 0, 4, 4)


class TestHomography:
    def test_zero_tilt(self):
        ga = alignment_homography(CAM, 0.0, 0.0)
        np.testing.assert_array_equal(ga.H, np.eye(3))
        assert ga.mask.all()

    def test_inverse(self):
        rng = np.random.default_rng(1)
        for psi, theta in rng.uniform(-0.5, 0.5, size=(100, 2)):
            ga = alignment_homography(CAM, psi, theta)
            np.testing.assert_allclose(ga.H @ ga.H_inv, np.eye(3), atol=1e-10)

    def test_mask_matches_oracle(self):
        rng = np.random.default_rng(2)
        for psi, theta in rng.uniform(-0.5, 0.5, size=(20, 2)):
            ga = alignment_homography(CAM, psi, theta)
            np.testing.assert_array_equal(ga.mask, oracle_mask(CAM, psi, theta))

    def test_pitch_gives_edge_band(self):
        m = alignment_homography(CAM, 0.0, 0.2).mask
        full_false = ~m.any(axis=1)
        rows = np.flatnonzero(full_false)
        assert rows.size > 0
        # one contiguous block touching exactly one of the top/bottom edges
        assert np.all(np.diff(rows) == 1)
        assert (rows[0] == 0) != (rows[-1] == CAM.height - 1)
        assert m[0].all() or m[-1].all()
        # away from the band only thin perspective slivers at the sides are lost
        partial = m[~full_false]
        assert partial.mean() > 0.95
        np.testing.assert_array_equal(m, oracle_mask(CAM, 0.0, 0.2))

    @given(tilt, tilt)
    def test_group_closure(self, psi, theta):
        # rotating by theta then by -theta (same roll axis) comes back
        a = alignment_homography(CAM, 0.0, theta).H
        b = alignment_homography(CAM, 0.0, -theta).H
        np.testing.assert_allclose(a @ b, np.eye(3), atol=1e-9)
        c = alignment_homography(CAM, psi, 0.0).H
        d = alignment_homography(CAM, -psi, 0.0).H
        np.testing.assert_allclose(c @ d, np.eye(3), atol=1e-9)

    @given(tilt, st.floats(0.0, 0.4), st.floats(0.0, 0.4))
    def test_mask_monotone_in_pitch(self, psi, t1, dt):
        small = alignment_homography(CAM, psi, t1).mask.sum()
        large = alignment_homography(CAM, psi, t1 + dt).mask.sum()
        assert large <= small

    def test_principal_point_fixed_at_zero_tilt(self):
        ga = alignment_homography(CAM, 0.0, 0.0)
        np.testing.assert_allclose(warp_points(ga.H, np.array([[CAM.cx, CAM.cy]])), [[CAM.cx, CAM.cy]])

    def test_principal_ray_under_pitch(self):
        # the optical axis leaves the principal point vertically by fy * tan(theta)
        theta = 0.15
        ga = alignment_homography(CAM, 0.0, theta)
        p = warp_points(ga.H, np.array([[CAM.cx, CAM.cy]]))[0]
        assert p[0] == pytest.approx(CAM.cx)
        assert abs(p[1] - CAM.cy) == pytest.approx(CAM.fy * math.tan(theta))

    def test_roll_rotates_about_principal_point(self):
        ga = alignment_homography(CAM, 0.3, 0.0)
        p = warp_points(ga.H, np.array([[CAM.cx + 10.0, CAM.cy]]))[0]
        assert math.hypot(p[0] - CAM.cx, p[1] - CAM.cy) == pytest.approx(10.0)

    @pytest.mark.parametrize("psi, theta", [(math.pi / 2, 0.0), (0.0, -math.pi / 2), (2.0, 0.1)])
    def test_degenerate(self, psi, theta):
        with pytest.raises(DegenerateTilt):
            alignment_homography(CAM, psi, theta)

    def test_mask_pixels(self):
        np.testing.assert_array_equal(mask_pixels(np.array([[True, False]])), [[255, 0]])
