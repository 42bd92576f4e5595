"""Analytic, twice-differentiable body trajectories used by the simulator.

Body and camera frames coincide (x right, y down, z forward). Attitude is a
ZYX Euler triple (yaw, pitch, roll) applied to a base orientation whose
optical axis points along world +x with image "up" along world +z, so yaw
alone pans the camera horizontally.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from geometry.pose import Pose
from geometry.so3 import so3_exp

# Columns: camera x, y, z axes expressed in the world frame
CAMERA_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class Trajectory(ABC):
    """Time-parameterized pose and its derivatives (world frame unless noted)."""

    duration: float = math.inf

    @abstractmethod
    def position(self, t: float) -> np.ndarray: ...

    @abstractmethod
    def velocity(self, t: float) -> np.ndarray: ...

    @abstractmethod
    def acceleration(self, t: float) -> np.ndarray: ...

    @abstractmethod
    def rotation(self, t: float) -> np.ndarray:
        """R_wb at time t."""

    @abstractmethod
    def angular_velocity(self, t: float) -> np.ndarray:
        """Body-frame angular rate at time t."""

    def pose(self, t: float) -> Pose:
        return Pose(self.rotation(t), self.position(t))


def _euler_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def _euler_body_rates(pitch, roll, dyaw, dpitch, droll) -> np.ndarray:
    sp, cp = math.sin(pitch), math.cos(pitch)
    sr, cr = math.sin(roll), math.cos(roll)
    return np.array(
        [
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        ]
    )


class AttitudeTrajectory(Trajectory):
    """Common attitude handling for trajectories driven by Euler angle functions."""

    @abstractmethod
    def attitude(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(yaw, pitch, roll) and their time derivatives."""

    def rotation(self, t: float) -> np.ndarray:
        angles, _ = self.attitude(t)
        return _euler_rotation(*angles) @ CAMERA_BASE

    def angular_velocity(self, t: float) -> np.ndarray:
        (_, pitch, roll), (dyaw, dpitch, droll) = self.attitude(t)
        return CAMERA_BASE.T @ _euler_body_rates(pitch, roll, dyaw, dpitch, droll)


@dataclass
class CircleTrajectory(AttitudeTrajectory):
    """Horizontal circle; the camera looks radially outward plus a heading offset.

    Small pitch/roll wobble and vertical bobbing keep every IMU axis excited.
    """

    radius: float = 2.0
    period: float = 20.0
    center: tuple[float, float, float] = (0.0, 0.0, 1.5)
    phase: float = 0.0
    heading_offset: float = 0.0
    bob_amplitude: float = 0.0
    bob_period: float = 4.0
    wobble_amplitude: float = 0.0
    wobble_period: float = 3.0
    duration: float = math.inf

    def _angle(self, t: float) -> float:
        return self.phase + 2.0 * math.pi * t / self.period

    def position(self, t: float) -> np.ndarray:
        a = self._angle(t)
        wb = 2.0 * math.pi / self.bob_period
        return np.asarray(self.center, dtype=float) + np.array(
            [self.radius * math.cos(a), self.radius * math.sin(a), self.bob_amplitude * math.sin(wb * t)]
        )

    def velocity(self, t: float) -> np.ndarray:
        a = self._angle(t)
        w = 2.0 * math.pi / self.period
        wb = 2.0 * math.pi / self.bob_period
        return np.array(
            [
                -self.radius * w * math.sin(a),
                self.radius * w * math.cos(a),
                self.bob_amplitude * wb * math.cos(wb * t),
            ]
        )

    def acceleration(self, t: float) -> np.ndarray:
        a = self._angle(t)
        w = 2.0 * math.pi / self.period
        wb = 2.0 * math.pi / self.bob_period
        return np.array(
            [
                -self.radius * w * w * math.cos(a),
                -self.radius * w * w * math.sin(a),
                -self.bob_amplitude * wb * wb * math.sin(wb * t),
            ]
        )

    def attitude(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        w = 2.0 * math.pi / self.period
        ww = 2.0 * math.pi / self.wobble_period
        yaw = self._angle(t) + self.heading_offset
        pitch = self.wobble_amplitude * math.sin(ww * t)
        roll = self.wobble_amplitude * math.cos(1.3 * ww * t)
        rates = np.array(
            [w, self.wobble_amplitude * ww * math.cos(ww * t), -self.wobble_amplitude * 1.3 * ww * math.sin(1.3 * ww * t)]
        )
        return np.array([yaw, pitch, roll]), rates


@dataclass
class LissajousTrajectory(AttitudeTrajectory):
    """Figure-eight style motion with an oscillating heading."""

    center: tuple[float, float, float] = (0.0, 0.0, 1.5)
    amplitudes: tuple[float, float, float] = (2.0, 1.5, 0.3)
    frequencies: tuple[float, float, float] = (1.0, 2.0, 3.0)
    base_period: float = 20.0
    phase: float = 0.0
    yaw_center: float = 0.0
    yaw_amplitude: float = 0.6
    pitch_amplitude: float = 0.05
    duration: float = math.inf

    def _omega(self) -> np.ndarray:
        return 2.0 * math.pi * np.asarray(self.frequencies, dtype=float) / self.base_period

    def position(self, t: float) -> np.ndarray:
        w = self._omega()
        arg = w * t + np.array([self.phase, 0.0, 0.0])
        return np.asarray(self.center, dtype=float) + np.asarray(self.amplitudes) * np.sin(arg)

    def velocity(self, t: float) -> np.ndarray:
        w = self._omega()
        arg = w * t + np.array([self.phase, 0.0, 0.0])
        return np.asarray(self.amplitudes) * w * np.cos(arg)

    def acceleration(self, t: float) -> np.ndarray:
        w = self._omega()
        arg = w * t + np.array([self.phase, 0.0, 0.0])
        return -np.asarray(self.amplitudes) * w * w * np.sin(arg)

    def attitude(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        wy = 2.0 * math.pi / self.base_period
        yaw = self.yaw_center + self.yaw_amplitude * math.sin(wy * t)
        pitch = self.pitch_amplitude * math.sin(3.0 * wy * t)
        rates = np.array(
            [
                self.yaw_amplitude * wy * math.cos(wy * t),
                self.pitch_amplitude * 3.0 * wy * math.cos(3.0 * wy * t),
                0.0,
            ]
        )
        return np.array([yaw, pitch, 0.0]), rates


class WaypointTrajectory(AttitudeTrajectory):
    """Cubic-spline interpolation through timed (x, y, z, yaw) waypoints."""

    def __init__(self, times: np.ndarray, positions: np.ndarray, yaws: np.ndarray):
        times = np.asarray(times, dtype=float)
        if len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("Waypoint times must be strictly increasing (>= 2 points)")
        self._pos = CubicSpline(times, np.asarray(positions, dtype=float), bc_type="clamped")
        self._yaw = CubicSpline(times, np.unwrap(np.asarray(yaws, dtype=float)), bc_type="clamped")
        self.t0 = float(times[0])
        self.duration = float(times[-1] - times[0])

    def _clip(self, t: float) -> float:
        return min(max(t, self.t0), self.t0 + self.duration)

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self._pos(self._clip(t)))

    def velocity(self, t: float) -> np.ndarray:
        return np.asarray(self._pos(self._clip(t), 1))

    def acceleration(self, t: float) -> np.ndarray:
        return np.asarray(self._pos(self._clip(t), 2))

    def attitude(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        tc = self._clip(t)
        return np.array([float(self._yaw(tc)), 0.0, 0.0]), np.array([float(self._yaw(tc, 1)), 0.0, 0.0])


@dataclass
class StationaryTrajectory(Trajectory):
    position_w: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_wb: np.ndarray = field(default_factory=lambda: np.eye(3))
    duration: float = math.inf

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.position_w, dtype=float)

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def rotation(self, t: float) -> np.ndarray:
        return np.asarray(self.rotation_wb, dtype=float)

    def angular_velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)


@dataclass
class ConstantSpinTrajectory(Trajectory):
    """Fixed position, constant body-frame angular rate from R(0) = I."""

    omega: tuple[float, float, float] = (0.0, 0.0, 1.0)
    position_w: tuple[float, float, float] = (0.0, 0.0, 0.0)
    duration: float = math.inf

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.position_w, dtype=float)

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def rotation(self, t: float) -> np.ndarray:
        return so3_exp(np.asarray(self.omega, dtype=float) * t)

    def angular_velocity(self, t: float) -> np.ndarray:
        return np.asarray(self.omega, dtype=float)


class TransformedTrajectory(Trajectory):
    """`base` left-composed with a fixed rigid transform T (world' <- world)."""

    def __init__(self, base: Trajectory, transform: Pose):
        self.base = base
        self.transform = transform
        self.duration = base.duration

    def position(self, t: float) -> np.ndarray:
        return self.transform.act(self.base.position(t))

    def velocity(self, t: float) -> np.ndarray:
        return self.transform.rotation @ self.base.velocity(t)

    def acceleration(self, t: float) -> np.ndarray:
        return self.transform.rotation @ self.base.acceleration(t)

    def rotation(self, t: float) -> np.ndarray:
        return self.transform.rotation @ self.base.rotation(t)

    def angular_velocity(self, t: float) -> np.ndarray:
        return self.base.angular_velocity(t)
