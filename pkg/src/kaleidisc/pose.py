"""Camera pose and pinhole geometry.

World convention: the disc lies on the plane y = 0 and cameras sit on the
negative-y side, which the plane normal (0, -1, 0) points toward. Cameras
follow the right-down-forward axis convention; a pose stores the
world-to-camera map ``p_cam = R @ p_world + T``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidInputError, InvalidPoseError

PLANE_NORMAL = np.array([0.0, -1.0, 0.0])


def _frozen(arr):
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def rotation_about_axis(axis, angle):
    """Rodrigues rotation about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform with an orthonormal rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        T = _frozen(self.translation).reshape(3)
        if not is_rotation(R):
            raise InvalidPoseError("rotation is not orthonormal with det +1")
        if not np.all(np.isfinite(T)):
            raise InvalidPoseError("translation has non-finite components")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @property
    def camera_center(self):
        """Camera center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def inverse(self):
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)


def world_to_camera(pose, points):
    """Map world points (..., 3) into the camera frame: R p + T."""
    p = np.asarray(points, dtype=float)
    return p @ pose.rotation.T + pose.translation


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters in pixels. Pixel centers sit at integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError("principal point must lie inside the image")

    @classmethod
    def centered(cls, size, focal_px):
        """Square image with the principal point at the exact grid center."""
        c = (size - 1) / 2.0
        return cls(focal_px, focal_px, c, c, size, size)


def project(intr, cam_points):
    """Project camera-frame points (..., 3) to pixels (..., 2) = (x, y).

    Raises BehindCameraError if any point has non-positive depth.
    """
    p = np.asarray(cam_points, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point(s) at non-positive depth")
    return np.stack([intr.fx * p[..., 0] / z + intr.cx,
                     intr.fy * p[..., 1] / z + intr.cy], axis=-1)


def look_at_pose(distance, pitch_deg, yaw_deg):
    """Camera on the sphere of radius ``distance``, aimed at the world origin.

    Pitch is measured from the plane (90 degrees = straight down); yaw
    rotates about the world y axis, with yaw 0 placing the camera over the
    +x axis. Valid pitch is the open interval (0, 90).
    """
    if not 0.0 < pitch_deg < 90.0:
        raise InvalidPoseError(f"pitch must be in (0, 90), got {pitch_deg}")
    if distance <= 0.0:
        raise InvalidPoseError(f"distance must be positive, got {distance}")
    p = math.radians(pitch_deg)
    yw = math.radians(yaw_deg)
    center = distance * np.array([math.cos(p) * math.cos(yw),
                                  -math.sin(p),
                                  math.cos(p) * math.sin(yw)])
    z = -center / np.linalg.norm(center)
    y = np.array([0.0, 1.0, 0.0]) - z[1] * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


def projected_orientation(R):
    """Rows of R with the plane-normal component removed: (r_i1, 0, r_i3)."""
    out = np.array(R, dtype=float)
    out[:, 1] = 0.0
    return out


def relative_rotation(Ri, Rj):
    """Relative rotation Ri @ Rj^T between two world-to-camera rotations."""
    Ri = np.asarray(Ri, dtype=float)
    Rj = np.asarray(Rj, dtype=float)
    return Ri @ Rj.T
