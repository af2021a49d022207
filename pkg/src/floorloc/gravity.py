"""Gravity alignment: tilt rotations, the warp homography and its validity mask.

Axis conventions
----------------
Rotations are expressed in the camera *body* frame: x forward (optical
axis), y left, z up. Roll ``psi`` turns about x, pitch ``theta`` about y::

    R_x(psi)   = [[1, 0, 0], [0, cos psi, -sin psi], [0, sin psi, cos psi]]
    R_y(theta) = [[cos theta, 0, sin theta], [0, 1, 0], [-sin theta, 0, cos theta]]
    R_cg       = R_y(theta) @ R_x(psi)        (gravity-aligned -> camera)

Pixels live in the optical frame (x right, y down, z forward). The fixed
permutation ``OPTICAL_FROM_BODY`` maps body to optical coordinates, so the
homography taking source pixels to gravity-aligned pixels is::

    H = K @ P @ R_cg.T @ P.T @ inv(K)

with the same intrinsics ``K`` on both sides. Positive pitch raises the
optical axis; roll rotates the image about the principal point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTilt

OPTICAL_FROM_BODY = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @classmethod
    def from_fov(cls, hfov: float, width: int, height: int) -> "CameraModel":
        """Square-pixel camera with the principal point at the image center."""
        f = width / (2.0 * math.tan(hfov / 2.0))
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def hfov(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True, eq=False)
class GravityAlignment:
    roll_psi: float
    pitch_theta: float
    H: np.ndarray
    H_inv: np.ndarray
    mask: np.ndarray  # (height, width), True where the aligned pixel has a source


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_cg(psi: float, theta: float) -> np.ndarray:
    """Rotation from the gravity-aligned frame to the camera body frame."""
    return rot_y(theta) @ rot_x(psi)


def _apply(H: np.ndarray, u: np.ndarray, v: np.ndarray):
    x = H[0, 0] * u + H[0, 1] * v + H[0, 2]
    y = H[1, 0] * u + H[1, 1] * v + H[1, 2]
    w = H[2, 0] * u + H[2, 1] * v + H[2, 2]
    return x, y, w


def alignment_homography(camera: CameraModel, psi: float, theta: float) -> GravityAlignment:
    """Homography into the gravity-aligned image and its validity mask.

    ``mask[v, u]`` is True when the aligned pixel center ``(u + .5, v + .5)``
    maps back (through ``H_inv``, in front of the camera) inside
    ``[0, width) x [0, height)`` of the source image.
    """
    if abs(psi) >= math.pi / 2 or abs(theta) >= math.pi / 2:
        raise DegenerateTilt(f"tilt too large: psi={psi}, theta={theta}")
    P = OPTICAL_FROM_BODY
    R_cg = rotation_cg(psi, theta)
    R_opt = P @ R_cg @ P.T
    H = camera.K @ R_opt.T @ camera.K_inv
    H_inv = camera.K @ R_opt @ camera.K_inv

    v, u = np.mgrid[0 : camera.height, 0 : camera.width]
    x, y, w = _apply(H_inv, u + 0.5, v + 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x / w
        ys = y / w
    mask = (w > 0) & (xs >= 0) & (xs < camera.width) & (ys >= 0) & (ys < camera.height)
    return GravityAlignment(float(psi), float(theta), H, H_inv, mask)


def warp_points(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a homography to (N, 2) pixel coordinates."""
    pts = np.asarray(points, dtype=float)
    x, y, w = _apply(H, pts[:, 0], pts[:, 1])
    return np.stack([x / w, y / w], axis=1)


def mask_pixels(mask: np.ndarray) -> np.ndarray:
    """0/255 image of a validity mask in file (top row first) order."""
    return np.where(mask, 255, 0)
