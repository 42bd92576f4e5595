"""Uniform motion model used before inertial initialization."""

from typing import Sequence

import numpy as np

from geometry.pose import Pose
from geometry.so3 import so3_exp
from imu.errors import NoSamplesInWindowError
from imu.types import ImuSample


def mean_angular_velocity(samples: Sequence[ImuSample], t_i: float, t_j: float) -> np.ndarray:
    """Time-weighted (trapezoidal) mean of the gyro samples strictly inside (t_i, t_j).

    Raises:
        NoSamplesInWindowError: when the open window holds no sample.
    """
    if not t_i < t_j:
        raise ValueError(f"Expected t_i < t_j, got {t_i} >= {t_j}")
    window = [s for s in samples if t_i < s.timestamp < t_j]
    if not window:
        raise NoSamplesInWindowError(t_i, t_j)
    if len(window) == 1:
        return window[0].gyro.copy()
    times = np.array([s.timestamp for s in window])
    gyro = np.array([s.gyro for s in window])
    return np.trapezoid(gyro, times, axis=0) / (times[-1] - times[0])


def predict_pose_umm(pose_r: Pose, v_mean: np.ndarray, dt: float) -> Pose:
    """Rotate by the mean rate over dt; translation is kept (negligible between frames)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return Pose(pose_r.rotation @ so3_exp(np.asarray(v_mean, dtype=float) * dt), pose_r.translation)
