"""Rigid transforms.

A Pose maps points from a source frame into a target frame,
X_target = R @ X_source + t. Naming follows T_<target><source>: T_wc maps
camera coordinates into the world, T_cw is its inverse.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from geometry.so3 import normalize_rotation, so3_exp, so3_log


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_tangent(cls, xi: np.ndarray) -> "Pose":
        """Pose from (rotation vector, translation); no SE(3) coupling."""
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(so3_exp(xi[:3]), xi[3:])

    @classmethod
    def from_quaternion(cls, xyzw: np.ndarray, translation: np.ndarray) -> "Pose":
        return cls(ScipyRotation.from_quat(np.asarray(xyzw, dtype=float)).as_matrix(), translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion_xyzw(self) -> np.ndarray:
        return ScipyRotation.from_matrix(self.rotation).as_quat()

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def act(self, points: np.ndarray) -> np.ndarray:
        """Transform a point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def normalized(self) -> "Pose":
        return Pose(normalize_rotation(self.rotation), self.translation)

    def log(self) -> np.ndarray:
        """(rotation vector, translation) pair stacked as a 6-vector."""
        return np.concatenate([so3_log(self.rotation), self.translation])

    def rotation_error_deg(self, other: "Pose") -> float:
        return float(np.degrees(np.linalg.norm(so3_log(self.rotation.T @ other.rotation))))

    def translation_error(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __repr__(self) -> str:
        rv = so3_log(self.rotation)
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"
