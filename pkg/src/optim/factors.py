"""Residual factors with analytic Jacobians.

Pose variables are NavStates with tangent order [dphi, dp, dv, dbg, dba]
(R <- R Exp(dphi), other components additive); a pose variable is solved
either in its 6-dof pose part or in all 15 dofs. Point variables are world
positions. A factor returns its residual and one Jacobian per key, each with
the full 15 pose columns; the solver keeps the columns it optimizes.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from geometry.camera import CameraIntrinsics, projection_jacobian
from geometry.errors import PointBehindCameraError
from geometry.pose import Pose
from geometry.so3 import right_jacobian_inv, skew, so3_log
from imu.preintegration import Preintegrated, imu_residual_jacobians
from imu.types import ImuBias, NavState
from optim.kernels import RobustKernel

Key = Hashable
POSE_DIM = 15


def reprojection_residual(
    state: NavState | Pose,
    point: np.ndarray,
    obs_px: np.ndarray,
    intr: CameraIntrinsics,
    offset: Pose | None = None,
    depth_epsilon: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """e = x - pi(T_cw X) with Jacobians wrt the 15-dof pose tangent and the point.

    `state` gives T_wc. With `offset` (T_anchor_camera) the observing camera
    sits at T_wc @ offset, as for observations carried by a virtual keyframe.

    Raises:
        PointBehindCameraError: the point is not in front of the observing camera.
    """
    rotation = state.rotation
    position = state.position if isinstance(state, NavState) else state.translation
    x_a = rotation.T @ (np.asarray(point, dtype=float) - position)
    d_c = np.eye(3)
    x_c = x_a
    if offset is not None:
        d_c = offset.rotation.T
        x_c = d_c @ (x_a - offset.translation)
    if x_c[2] <= depth_epsilon:
        raise PointBehindCameraError(float(x_c[2]), depth_epsilon)
    uv = np.array([intr.fx * x_c[0] / x_c[2] + intr.cx, intr.fy * x_c[1] / x_c[2] + intr.cy])
    residual = np.asarray(obs_px, dtype=float) - uv
    j_proj = -projection_jacobian(intr, x_c)[0] @ d_c
    j_pose = np.zeros((2, POSE_DIM))
    j_pose[:, 0:3] = j_proj @ skew(x_a)
    j_pose[:, 3:6] = -j_proj @ rotation.T
    j_point = j_proj @ rotation.T
    return residual, j_pose, j_point


class Factor(ABC):
    """A residual over some variables, whitened by `information` (diagonal vector or matrix)."""

    keys: tuple[Key, ...]
    information: np.ndarray
    kernel: RobustKernel | None = None

    @abstractmethod
    def linearize(self, values: Mapping[Key, NavState | np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]] | None:
        """Residual and Jacobians in key order, or None when the factor is inactive."""

    def whitened_sq(self, residual: np.ndarray) -> float:
        info = self.information
        if info.ndim == 1:
            return float(residual @ (info * residual))
        return float(residual @ info @ residual)


@dataclass(eq=False)
class ReprojectionFactor(Factor):
    pose_key: Key
    point_key: Key
    obs_px: np.ndarray
    intr: CameraIntrinsics
    sigma: float = 1.0
    kernel: RobustKernel | None = None
    offset: Pose | None = None
    information: np.ndarray = field(init=False)

    def __post_init__(self):
        self.keys = (self.pose_key, self.point_key)
        self.information = np.full(2, 1.0 / (self.sigma * self.sigma))

    def linearize(self, values):
        try:
            r, j_pose, j_point = reprojection_residual(
                values[self.pose_key], values[self.point_key], self.obs_px, self.intr, self.offset
            )
        except PointBehindCameraError:
            return None
        return r, [j_pose, j_point]


@dataclass(eq=False)
class ImuFactor(Factor):
    key_i: Key
    key_j: Key
    pre: Preintegrated
    gravity: np.ndarray
    information: np.ndarray
    kernel: RobustKernel | None = None

    def __post_init__(self):
        self.keys = (self.key_i, self.key_j)

    def linearize(self, values):
        r, j_i, j_j = imu_residual_jacobians(self.pre, values[self.key_i], values[self.key_j], self.gravity)
        return r, [j_i, j_j]


@dataclass(eq=False)
class BiasWalkFactor(Factor):
    key_i: Key
    key_j: Key
    information: np.ndarray
    kernel: RobustKernel | None = None

    def __post_init__(self):
        self.keys = (self.key_i, self.key_j)

    def linearize(self, values):
        b_i = values[self.key_i].bias.as_vector()
        b_j = values[self.key_j].bias.as_vector()
        j_i = np.zeros((6, POSE_DIM))
        j_j = np.zeros((6, POSE_DIM))
        j_i[:, 9:15] = -np.eye(6)
        j_j[:, 9:15] = np.eye(6)
        return b_j - b_i, [j_i, j_j]


@dataclass(eq=False)
class PriorFactor(Factor):
    """Pose prior [log(R0^T R); p - p0]; anchors the gauge of its component."""

    key: Key
    pose: Pose
    weight: float = 1.0e6
    kernel: RobustKernel | None = None
    information: np.ndarray = field(init=False)

    def __post_init__(self):
        self.keys = (self.key,)
        self.information = np.full(6, self.weight)

    def linearize(self, values):
        state = values[self.key]
        e_r = so3_log(self.pose.rotation.T @ state.rotation)
        j = np.zeros((6, POSE_DIM))
        j[0:3, 0:3] = right_jacobian_inv(e_r)
        j[3:6, 3:6] = np.eye(3)
        return np.concatenate([e_r, state.position - self.pose.translation]), [j]


@dataclass(eq=False)
class BiasPriorFactor(Factor):
    key: Key
    bias: ImuBias
    information: np.ndarray
    kernel: RobustKernel | None = None

    def __post_init__(self):
        self.keys = (self.key,)

    def linearize(self, values):
        j = np.zeros((6, POSE_DIM))
        j[:, 9:15] = np.eye(6)
        return values[self.key].bias.as_vector() - self.bias.as_vector(), [j]


@dataclass(eq=False)
class RelativePoseFactor(Factor):
    """Measured T_ij = T_i^-1 T_j; residual [log(R_m^T R_i^T R_j); R_i^T (p_j - p_i) - t_m]."""

    key_i: Key
    key_j: Key
    measured: Pose
    information: np.ndarray
    kernel: RobustKernel | None = None

    def __post_init__(self):
        self.keys = (self.key_i, self.key_j)

    def linearize(self, values):
        s_i, s_j = values[self.key_i], values[self.key_j]
        r_i, r_j = s_i.rotation, s_j.rotation
        e_r = so3_log(self.measured.rotation.T @ r_i.T @ r_j)
        rel_t = r_i.T @ (s_j.position - s_i.position)
        jr_inv = right_jacobian_inv(e_r)
        j_i = np.zeros((6, POSE_DIM))
        j_j = np.zeros((6, POSE_DIM))
        j_i[0:3, 0:3] = -jr_inv @ r_j.T @ r_i
        j_j[0:3, 0:3] = jr_inv
        j_i[3:6, 0:3] = skew(rel_t)
        j_i[3:6, 3:6] = -r_i.T
        j_j[3:6, 3:6] = r_i.T
        return np.concatenate([e_r, rel_t - self.measured.translation]), [j_i, j_j]
