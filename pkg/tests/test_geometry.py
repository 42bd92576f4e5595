import math

import numpy as np
import pytest

from geometry.camera import CameraIntrinsics, project, project_points
from geometry.errors import PointBehindCameraError
from geometry.pose import Pose
from geometry.so3 import (
    is_rotation,
    normalize_rotation,
    right_jacobian,
    skew,
    so3_exp,
    so3_log,
)


def test_skew_matches_cross_product():
    a = np.array([0.3, -1.2, 2.0])
    b = np.array([1.0, 0.5, -0.7])
    assert np.allclose(skew(a) @ b, np.cross(a, b))


@pytest.mark.parametrize(
    "omega",
    [
        [0.0, 0.0, 0.0],
        [1e-10, -2e-10, 0.0],
        [0.1, -0.2, 0.3],
        [0.0, 0.0, math.pi - 1e-4],
        [1.0, 2.0, -0.5],
    ],
)
def test_log_inverts_exp(omega):
    omega = np.asarray(omega)
    rotation = so3_exp(omega)
    assert is_rotation(rotation, tol=1e-9)
    assert np.allclose(so3_log(rotation), omega, atol=1e-6)


def test_log_at_pi_returns_valid_axis():
    rotation = so3_exp(np.array([math.pi, 0.0, 0.0]))
    phi = so3_log(rotation)
    assert math.isclose(np.linalg.norm(phi), math.pi, abs_tol=1e-6)
    assert np.allclose(so3_exp(phi), rotation, atol=1e-9)


def test_right_jacobian_first_order():
    phi = np.array([0.4, -0.3, 0.2])
    delta = np.array([1e-6, -2e-6, 1.5e-6])
    lhs = so3_exp(phi + delta)
    rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ delta)
    assert np.allclose(lhs, rhs, atol=1e-11)


def test_normalize_rotation_projects_onto_so3():
    noisy = so3_exp(np.array([0.2, 0.1, -0.4])) + 1e-3 * np.arange(9).reshape(3, 3)
    assert not is_rotation(noisy)
    assert is_rotation(normalize_rotation(noisy))


def test_pose_compose_inverse_identity():
    pose = Pose(so3_exp(np.array([0.1, 0.2, 0.3])), np.array([1.0, -2.0, 0.5]))
    assert (pose @ pose.inverse()).allclose(Pose.identity(), atol=1e-12)
    point = np.array([0.3, 0.4, 5.0])
    assert np.allclose(pose.inverse().act(pose.act(point)), point)


def test_pose_compose_applies_right_operand_first():
    a = Pose(so3_exp(np.array([0.0, 0.0, 0.5])), np.array([1.0, 0.0, 0.0]))
    b = Pose(np.eye(3), np.array([0.0, 2.0, 0.0]))
    point = np.array([1.0, 1.0, 1.0])
    assert np.allclose((a @ b).act(point), a.act(b.act(point)))


def test_pose_quaternion_round_trip():
    pose = Pose(so3_exp(np.array([-0.7, 0.2, 1.1])), np.array([3.0, 2.0, 1.0]))
    again = Pose.from_quaternion(pose.quaternion_xyzw(), pose.translation)
    assert again.allclose(pose, atol=1e-12)


def test_pose_is_immutable():
    pose = Pose.identity()
    with pytest.raises(ValueError):
        pose.translation[0] = 1.0


def test_project_principal_ray(intrinsics):
    uv = project(intrinsics, np.array([0.0, 0.0, 4.0]))
    assert np.allclose(uv, [intrinsics.cx, intrinsics.cy])


def test_project_behind_camera_raises(intrinsics):
    with pytest.raises(PointBehindCameraError):
        project(intrinsics, np.array([0.1, 0.1, -1.0]))
    with pytest.raises(PointBehindCameraError):
        project(intrinsics, np.array([0.1, 0.1, 0.0]))


def test_backproject_inverts_project(intrinsics):
    uv = np.array([[10.0, 20.0], [400.0, 300.0], [700.0, 470.0]])
    depth = np.array([1.0, 3.5, 12.0])
    points = intrinsics.backproject(uv, depth)
    projected, valid = project_points(intrinsics, points)
    assert valid.all()
    assert np.allclose(projected, uv)


def test_project_points_marks_invalid_rows(intrinsics):
    uv, valid = project_points(intrinsics, np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]]))
    assert valid.tolist() == [True, False]
    assert np.isnan(uv[1]).all()


def test_contains_respects_margin(intrinsics):
    uv = np.array([[5.0, 5.0], [100.0, 100.0], [intrinsics.width - 1.0, 10.0]])
    assert intrinsics.contains(uv).tolist() == [True, True, True]
    assert intrinsics.contains(uv, margin=10).tolist() == [False, True, False]


def test_intrinsics_reject_bad_values():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1.0, 1.0, 10.0, 10.0, 20, 20)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 30.0, 10.0, 20, 20)
