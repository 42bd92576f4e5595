from dataclasses import dataclass

import numpy as np

from config import ImuConfig
from geometry.pose import Pose
from geometry.so3 import so3_exp


def _frozen_vec(value, size: int = 3) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(size)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ImuSample:
    """One gyro/accelerometer reading in the body frame."""

    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "gyro", _frozen_vec(self.gyro))
        object.__setattr__(self, "accel", _frozen_vec(self.accel))


@dataclass(frozen=True, eq=False)
class ImuNoiseModel:
    gyro_noise_density: float = 0.0
    accel_noise_density: float = 0.0
    gyro_bias_walk: float = 0.0
    accel_bias_walk: float = 0.0
    gravity: np.ndarray = (0.0, 0.0, -9.81)

    def __post_init__(self):
        for name in ("gyro_noise_density", "accel_noise_density", "gyro_bias_walk", "accel_bias_walk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        object.__setattr__(self, "gravity", _frozen_vec(self.gravity))

    @classmethod
    def from_config(cls, config: ImuConfig, noisy: bool = True) -> "ImuNoiseModel":
        if not noisy:
            return cls(gravity=config.gravity)
        return cls(
            gyro_noise_density=config.gyro_noise_density,
            accel_noise_density=config.accel_noise_density,
            gyro_bias_walk=config.gyro_bias_walk,
            accel_bias_walk=config.accel_bias_walk,
            gravity=config.gravity,
        )


@dataclass(frozen=True, eq=False)
class ImuBias:
    gyro: np.ndarray = (0.0, 0.0, 0.0)
    accel: np.ndarray = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "gyro", _frozen_vec(self.gyro))
        object.__setattr__(self, "accel", _frozen_vec(self.accel))

    @classmethod
    def zero(cls) -> "ImuBias":
        return cls()

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "ImuBias":
        vec = np.asarray(vec, dtype=float).reshape(6)
        return cls(vec[:3], vec[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


STATE_DIM = 15


@dataclass(frozen=True, eq=False)
class NavState:
    """Keyframe/body state. rotation and position give T_wb."""

    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray = (0.0, 0.0, 0.0)
    bias: ImuBias = ImuBias()

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        r.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", _frozen_vec(self.position))
        object.__setattr__(self, "velocity", _frozen_vec(self.velocity))

    @classmethod
    def from_pose(cls, pose: Pose, velocity=(0.0, 0.0, 0.0), bias: ImuBias | None = None) -> "NavState":
        return cls(pose.rotation, pose.translation, velocity, bias or ImuBias())

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.position)

    def with_pose(self, pose: Pose) -> "NavState":
        return NavState(pose.rotation, pose.translation, self.velocity, self.bias)

    def with_velocity(self, velocity: np.ndarray) -> "NavState":
        return NavState(self.rotation, self.position, velocity, self.bias)

    def with_bias(self, bias: ImuBias) -> "NavState":
        return NavState(self.rotation, self.position, self.velocity, bias)

    def retract(self, delta: np.ndarray) -> "NavState":
        """Apply a tangent update ordered [dphi, dp, dv, dbg, dba] (15) or [dphi, dp] (6)."""
        d = np.asarray(delta, dtype=float)
        rotation = self.rotation @ so3_exp(d[0:3])
        position = self.position + d[3:6]
        if len(d) == 6:
            return NavState(rotation, position, self.velocity, self.bias)
        return NavState(
            rotation,
            position,
            self.velocity + d[6:9],
            ImuBias(self.bias.gyro + d[9:12], self.bias.accel + d[12:15]),
        )
