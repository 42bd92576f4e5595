"""IMU simulation, preintegration on the manifold and motion prediction."""

from imu.errors import ImuBatchError, ImuError, NoSamplesInWindowError
from imu.motion import mean_angular_velocity, predict_pose_umm
from imu.preintegration import (
    ImuBuffer,
    Preintegrated,
    bias_corrected_deltas,
    imu_residual,
    predict_state,
    preintegrate,
)
from imu.simulation import simulate_measurements
from imu.types import ImuBias, ImuNoiseModel, ImuSample, NavState

__all__ = [
    "ImuBatchError",
    "ImuBias",
    "ImuBuffer",
    "ImuError",
    "ImuNoiseModel",
    "ImuSample",
    "NavState",
    "NoSamplesInWindowError",
    "Preintegrated",
    "bias_corrected_deltas",
    "imu_residual",
    "mean_angular_velocity",
    "predict_pose_umm",
    "predict_state",
    "preintegrate",
    "simulate_measurements",
]
