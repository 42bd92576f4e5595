"""Pinhole camera model without distortion (keypoints arrive rectified)."""

from dataclasses import dataclass

import numpy as np

from config import CameraConfig
from geometry.errors import PointBehindCameraError

DEPTH_EPSILON = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("Focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("Principal point must lie inside the image")

    @classmethod
    def from_config(cls, config: CameraConfig) -> "CameraIntrinsics":
        return cls(config.fx, config.fy, config.cx, config.cy, config.width, config.height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= margin)
            & (uv[:, 0] < self.width - margin)
            & (uv[:, 1] >= margin)
            & (uv[:, 1] < self.height - margin)
        )

    def backproject(self, uv: np.ndarray, depth: np.ndarray | float = 1.0) -> np.ndarray:
        """Points at the given depth (Z) along the rays of pixels (N, 2) -> (N, 3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        rays = np.column_stack(
            [(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy, np.ones(len(uv))]
        )
        return rays * np.asarray(depth, dtype=float).reshape(-1, 1)

    def bearings(self, uv: np.ndarray) -> np.ndarray:
        rays = self.backproject(uv, 1.0)
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def project(
    intr: CameraIntrinsics, x_cam: np.ndarray, depth_epsilon: float = DEPTH_EPSILON
) -> np.ndarray:
    """Project one camera-frame point: (fx X/Z + cx, fy Y/Z + cy).

    Raises:
        PointBehindCameraError: if Z <= depth_epsilon.
    """
    x, y, z = np.asarray(x_cam, dtype=float).reshape(3)
    if z <= depth_epsilon:
        raise PointBehindCameraError(z, depth_epsilon)
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])


def project_points(
    intr: CameraIntrinsics, x_cam: np.ndarray, depth_epsilon: float = DEPTH_EPSILON
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns (uv (N, 2), valid mask). Invalid rows are NaN."""
    pts = np.atleast_2d(np.asarray(x_cam, dtype=float))
    z = pts[:, 2]
    valid = z > depth_epsilon
    safe_z = np.where(valid, z, 1.0)
    uv = np.column_stack(
        [intr.fx * pts[:, 0] / safe_z + intr.cx, intr.fy * pts[:, 1] / safe_z + intr.cy]
    )
    uv[~valid] = np.nan
    return uv, valid


def projection_jacobian(intr: CameraIntrinsics, x_cam: np.ndarray) -> np.ndarray:
    """d(u, v)/d(X, Y, Z) for points (N, 3) -> (N, 2, 3)."""
    pts = np.atleast_2d(np.asarray(x_cam, dtype=float))
    inv_z = 1.0 / pts[:, 2]
    jac = np.zeros((len(pts), 2, 3))
    jac[:, 0, 0] = intr.fx * inv_z
    jac[:, 0, 2] = -intr.fx * pts[:, 0] * inv_z * inv_z
    jac[:, 1, 1] = intr.fy * inv_z
    jac[:, 1, 2] = -intr.fy * pts[:, 1] * inv_z * inv_z
    return jac
