"""Rotation and pose algebra plus the pinhole camera model."""

from geometry.camera import CameraIntrinsics, project, project_points
from geometry.errors import GeometryError, PointBehindCameraError
from geometry.pose import Pose
from geometry.so3 import skew, so3_exp, so3_log

__all__ = [
    "CameraIntrinsics",
    "GeometryError",
    "PointBehindCameraError",
    "Pose",
    "project",
    "project_points",
    "skew",
    "so3_exp",
    "so3_log",
]
