"""Map initialization: two-view visual bootstrap and inertial alignment.

The visual stage recovers a relative pose from an essential matrix,
triangulates the inlier correspondences and polishes both with a small
bundle adjustment; its scale is fixed by a unit baseline. The inertial stage
keeps those poses fixed and estimates scale, gravity direction, velocities
and the IMU bias by maximum a posteriori least squares.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from config import KernelKind, VioConfig
from edge.errors import ExcitationTooLowError, InertialInitError, InsufficientParallaxError
from geometry.camera import CameraIntrinsics
from geometry.errors import PointBehindCameraError
from geometry.pose import Pose
from geometry.so3 import so3_exp, so3_log
from imu.preintegration import Preintegrated, imu_information, imu_residual
from imu.types import ImuBias, ImuNoiseModel, NavState
from optim.errors import SolverError
from optim.factors import ReprojectionFactor, reprojection_residual
from optim.kernels import RobustKernel
from optim.solver import Problem, levenberg_marquardt
from tracking.errors import InsufficientCorrespondencesError

logger = logging.getLogger(__name__)

GRAVITY_MAGNITUDE = 9.81
_DOWN = np.array([0.0, 0.0, -1.0])


@dataclass(eq=False)
class VisualInit:
    """Second view pose T_wc (first view at the identity) and triangulated points.

    `indices` selects the correspondences that produced `points`.
    """

    pose_b: Pose
    points: np.ndarray
    indices: np.ndarray
    parallax_deg: float


@dataclass(eq=False)
class InertialInit:
    """Scale and gravity in the visual frame, metric velocities and the shared bias.

    `rotation` maps visual-frame directions into the gravity-aligned world
    (gravity along -z).
    """

    scale: float
    gravity_dir: np.ndarray
    rotation: np.ndarray
    velocities: np.ndarray
    bias: ImuBias
    cost: float = 0.0


def rotation_parallax_deg(bearings_a: np.ndarray, bearings_b: np.ndarray) -> float:
    """Median angle between bearings after removing the best-fitting pure rotation."""
    rot, _ = Rotation.align_vectors(bearings_b, bearings_a)
    rotated = rot.apply(bearings_a)
    cos = np.clip(np.sum(rotated * bearings_b, axis=1), -1.0, 1.0)
    return float(np.degrees(np.median(np.arccos(cos))))


def _refine_point(
    x: np.ndarray, poses: Sequence[Pose], pixels: Sequence[np.ndarray], intr: CameraIntrinsics, iters: int = 3
) -> np.ndarray:
    for _ in range(iters):
        h = np.zeros((3, 3))
        g = np.zeros(3)
        try:
            for pose, px in zip(poses, pixels):
                e, _, j = reprojection_residual(pose, x, px, intr)
                h += j.T @ j
                g += j.T @ e
            step = -np.linalg.solve(h + 1e-9 * np.eye(3), g)
        except (PointBehindCameraError, np.linalg.LinAlgError):
            break
        x = x + step
        if np.linalg.norm(step) < 1e-10:
            break
    return x


def triangulate_pairs(
    T_wc_a: Pose,
    T_wc_b: Pose,
    px_a: np.ndarray,
    px_b: np.ndarray,
    intr: CameraIntrinsics,
    max_reproj: float = 2.0,
    min_parallax_deg: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint triangulation with Gauss-Newton refinement.

    Returns (points (N, 3), accepted mask). A point is rejected when it lands
    behind either camera, reprojects worse than max_reproj px in either view
    or sees the baseline under less than min_parallax_deg.
    """
    px_a = np.atleast_2d(np.asarray(px_a, dtype=float))
    px_b = np.atleast_2d(np.asarray(px_b, dtype=float))
    n = len(px_a)
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    c_a, c_b = T_wc_a.translation, T_wc_b.translation
    d_a = intr.bearings(px_a) @ T_wc_a.rotation.T
    d_b = intr.bearings(px_b) @ T_wc_b.rotation.T
    w0 = c_a - c_b
    a = np.sum(d_a * d_a, axis=1)
    b = np.sum(d_a * d_b, axis=1)
    c = np.sum(d_b * d_b, axis=1)
    d = d_a @ w0
    e = d_b @ w0
    denom = a * c - b * b
    safe = np.abs(denom) > 1e-12
    denom = np.where(safe, denom, 1.0)
    s = (b * e - c * d) / denom
    t = (a * e - b * d) / denom
    points = 0.5 * ((c_a + s[:, None] * d_a) + (c_b + t[:, None] * d_b))

    cos_parallax = np.clip(np.sum(d_a * d_b, axis=1), -1.0, 1.0)
    ok = safe & (s > 0) & (t > 0) & (np.degrees(np.arccos(cos_parallax)) >= min_parallax_deg)

    poses = (T_wc_a, T_wc_b)
    for i in np.flatnonzero(ok):
        x = _refine_point(points[i], poses, (px_a[i], px_b[i]), intr)
        try:
            err_a = np.linalg.norm(reprojection_residual(T_wc_a, x, px_a[i], intr)[0])
            err_b = np.linalg.norm(reprojection_residual(T_wc_b, x, px_b[i], intr)[0])
        except PointBehindCameraError:
            ok[i] = False
            continue
        points[i] = x
        ok[i] = max(err_a, err_b) <= max_reproj
    return points, ok


def visual_init(px_a: np.ndarray, px_b: np.ndarray, intr: CameraIntrinsics, cfg: VioConfig) -> VisualInit:
    """Bootstrap a map from two views with known correspondences px_a[i] <-> px_b[i].

    Raises:
        InsufficientCorrespondencesError: fewer than cfg.init_min_correspondences pairs.
        InsufficientParallaxError: rotation-compensated parallax below the threshold,
            or no usable essential matrix.
    """
    px_a = np.asarray(px_a, dtype=np.float64).reshape(-1, 2)
    px_b = np.asarray(px_b, dtype=np.float64).reshape(-1, 2)
    n = len(px_a)
    if n < cfg.init_min_correspondences:
        raise InsufficientCorrespondencesError(n, cfg.init_min_correspondences)

    parallax = rotation_parallax_deg(intr.bearings(px_a), intr.bearings(px_b))
    if parallax < cfg.init_min_parallax_deg:
        raise InsufficientParallaxError(parallax, cfg.init_min_parallax_deg, n)

    E, mask = cv2.findEssentialMat(px_a, px_b, intr.matrix, method=cv2.RANSAC, prob=0.999, threshold=1.0)
    if E is None or E.shape != (3, 3):
        raise InsufficientParallaxError(parallax, cfg.init_min_parallax_deg, n)
    _, R, t, mask = cv2.recoverPose(E, px_a, px_b, intr.matrix, mask=mask)
    # recoverPose returns T_ba: x_b = R x_a + t
    pose_b = Pose(R, t.reshape(3)).inverse()
    inliers = np.flatnonzero(mask.reshape(-1) > 0)

    points, ok = triangulate_pairs(
        Pose.identity(),
        pose_b,
        px_a[inliers],
        px_b[inliers],
        intr,
        cfg.triangulation_max_reproj,
        cfg.triangulation_min_parallax_deg,
    )
    indices = inliers[ok]
    points = points[ok]
    if len(indices) < cfg.init_min_correspondences:
        raise InsufficientParallaxError(parallax, cfg.init_min_parallax_deg, len(indices))

    pose_b, points = _two_view_ba(pose_b, points, px_a[indices], px_b[indices], intr, cfg)
    baseline = float(np.linalg.norm(pose_b.translation))
    if baseline <= 1e-12:
        raise InsufficientParallaxError(parallax, cfg.init_min_parallax_deg, len(indices))
    pose_b = Pose(pose_b.rotation, pose_b.translation / baseline)
    logger.info(
        f"[Init] Two-view map: {len(indices)}/{n} points, parallax {parallax:.2f} deg"
    )
    return VisualInit(pose_b, points / baseline, indices, parallax)


def _two_view_ba(pose_b, points, px_a, px_b, intr, cfg: VioConfig) -> tuple[Pose, np.ndarray]:
    problem = Problem()
    problem.add_pose("a", NavState.from_pose(Pose.identity()), fixed=True)
    problem.add_pose("b", NavState.from_pose(pose_b))
    kernel = RobustKernel(KernelKind.CAUCHY, cfg.cauchy_delta)
    for i, x in enumerate(points):
        problem.add_point(i, x)
        problem.add_factor(ReprojectionFactor("a", i, px_a[i], intr, cfg.obs_sigma_px, kernel))
        problem.add_factor(ReprojectionFactor("b", i, px_b[i], intr, cfg.obs_sigma_px, kernel))
    try:
        levenberg_marquardt(problem, max_iters=cfg.max_iters, tag="InitBA")
    except SolverError as e:
        logger.debug(f"[Init] Two-view refinement skipped: {e}")
        return pose_b, points
    refined = np.array([problem.points[i] for i in range(len(points))]).reshape(-1, 3)
    return problem.poses["b"].pose, refined


def gravity_alignment(gravity_dir: np.ndarray) -> np.ndarray:
    """Smallest rotation taking gravity_dir onto -z."""
    g = np.asarray(gravity_dir, dtype=float)
    g = g / np.linalg.norm(g)
    axis = np.cross(g, _DOWN)
    sin = np.linalg.norm(axis)
    cos = float(g @ _DOWN)
    if sin < 1e-12:
        return np.eye(3) if cos > 0 else np.diag([1.0, -1.0, -1.0])
    return so3_exp(axis / sin * math.atan2(sin, cos))


def _tangent_basis(direction: np.ndarray) -> np.ndarray:
    """Two unit vectors spanning the plane orthogonal to direction, as columns."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(direction[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(direction, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(direction, e1)
    return np.column_stack([e1, e2])


def _gyro_bias(rotations: list[np.ndarray], pres: list[Preintegrated]) -> np.ndarray:
    bg = np.zeros(3)
    for _ in range(2):
        rows, rhs = [], []
        for k, pre in enumerate(pres):
            r_ij = rotations[k].T @ rotations[k + 1]
            d_r = pre.delta_R @ so3_exp(pre.jac_dR_dbg @ (bg - pre.bias_lin.gyro))
            rows.append(pre.jac_dR_dbg)
            rhs.append(so3_log(d_r.T @ r_ij))
        step, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
        bg = bg + step
    return bg


def _linear_scale_gravity(rotations, positions, pres, bg):
    """Solve v/p preintegration equations for [s, g, v_0..v_n] with the gyro bias known."""
    n = len(rotations)
    dim = 4 + 3 * n
    rows, rhs = [], []
    bias = ImuBias(bg, np.zeros(3))
    for k, pre in enumerate(pres):
        dt = pre.dt_total
        d_bg = bias.gyro - pre.bias_lin.gyro
        d_ba = -pre.bias_lin.accel
        d_v = pre.delta_v + pre.jac_dv_dbg @ d_bg + pre.jac_dv_dba @ d_ba
        d_p = pre.delta_p + pre.jac_dp_dbg @ d_bg + pre.jac_dp_dba @ d_ba
        r_i = rotations[k]
        vi, vj = 4 + 3 * k, 4 + 3 * (k + 1)

        a = np.zeros((3, dim))
        a[:, 1:4] = -dt * np.eye(3)
        a[:, vi : vi + 3] = -np.eye(3)
        a[:, vj : vj + 3] = np.eye(3)
        rows.append(a)
        rhs.append(r_i @ d_v)

        a = np.zeros((3, dim))
        a[:, 0] = positions[k + 1] - positions[k]
        a[:, 1:4] = -0.5 * dt * dt * np.eye(3)
        a[:, vi : vi + 3] = -dt * np.eye(3)
        rows.append(a)
        rhs.append(r_i @ d_p)
    x, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return x[0], x[1:4], x[4:].reshape(n, 3)


def inertial_init(
    poses: Sequence[tuple[float, Pose]],
    pres: Sequence[Preintegrated],
    accel: np.ndarray,
    noise: ImuNoiseModel,
    cfg: VioConfig,
    bias_prior: ImuBias | None = None,
    bias_prior_weight: tuple[float, float] = (1.0e2, 1.0e2),
) -> InertialInit:
    """Estimate scale, gravity, velocities and bias with keyframe poses held fixed.

    Args:
        poses: (timestamp, T_wc) per keyframe in the up-to-scale visual frame.
        pres: preintegration between consecutive keyframes (len(poses) - 1).
        accel: raw accelerometer readings over the window, used for the excitation check.
        bias_prior: mean of the weak bias prior (zero by default).

    Raises:
        InertialInitError: too few keyframes, too short a span, or a non-positive scale.
        ExcitationTooLowError: accelerometer readings barely vary over the window.
    """
    if len(poses) < cfg.inertial_min_keyframes or len(pres) != len(poses) - 1:
        raise InertialInitError(
            f"Need {cfg.inertial_min_keyframes} keyframes with preintegration between them, got {len(poses)}"
        )
    span = poses[-1][0] - poses[0][0]
    if span < cfg.inertial_min_span:
        raise InertialInitError(f"Keyframes span {span:.2f} s, need {cfg.inertial_min_span:.2f} s")
    accel = np.asarray(accel, dtype=float).reshape(-1, 3)
    accel_std = float(np.linalg.norm(np.std(accel, axis=0))) if len(accel) else 0.0
    if accel_std < cfg.inertial_min_accel_std:
        raise ExcitationTooLowError(accel_std, cfg.inertial_min_accel_std)

    rotations = [p.rotation for _, p in poses]
    positions = [p.translation for _, p in poses]
    n = len(poses)

    bg0 = _gyro_bias(rotations, list(pres))
    s0, g0, v0 = _linear_scale_gravity(rotations, positions, pres, bg0)
    if not np.isfinite(s0) or s0 <= 0 or np.linalg.norm(g0) < 1e-6:
        raise InertialInitError(f"Linear alignment gave scale {s0:.4g}")
    g_dir0 = g0 / np.linalg.norm(g0)
    basis = _tangent_basis(g_dir0)
    prior = bias_prior or ImuBias()
    prior_vec = prior.as_vector()
    w_g, w_a = (math.sqrt(w) for w in bias_prior_weight)
    infos = [np.sqrt(imu_information(pre, noise)) for pre in pres]

    def unpack(x):
        scale = math.exp(x[0])
        g_dir = so3_exp(basis @ x[1:3]) @ g_dir0
        velocities = x[3 : 3 + 3 * n].reshape(n, 3)
        bias = ImuBias(x[3 + 3 * n : 6 + 3 * n], x[6 + 3 * n : 9 + 3 * n])
        return scale, g_dir, velocities, bias

    def residuals(x):
        scale, g_dir, velocities, bias = unpack(x)
        gravity = GRAVITY_MAGNITUDE * g_dir
        out = []
        for k, pre in enumerate(pres):
            s_i = NavState(rotations[k], scale * positions[k], velocities[k], bias)
            s_j = NavState(rotations[k + 1], scale * positions[k + 1], velocities[k + 1], bias)
            out.append(infos[k] * imu_residual(pre, s_i, s_j, gravity))
        b = bias.as_vector() - prior_vec
        out.append(np.concatenate([w_g * b[0:3], w_a * b[3:6]]))
        return np.concatenate(out)

    x0 = np.concatenate([[math.log(s0)], np.zeros(2), v0.reshape(-1), bg0, np.zeros(3)])
    sol = least_squares(residuals, x0, method="trf", x_scale="jac", max_nfev=200)
    scale, g_dir, velocities, bias = unpack(sol.x)
    if not np.isfinite(scale) or scale <= 0:
        raise InertialInitError(f"Refinement diverged (scale {scale:.4g})")
    logger.info(
        f"[Init] Inertial alignment over {n} keyframes: scale {scale:.4f}, "
        f"gravity {np.round(g_dir, 4).tolist()}, |bg| {np.linalg.norm(bias.gyro):.2e}"
    )
    return InertialInit(
        scale=scale,
        gravity_dir=g_dir,
        rotation=gravity_alignment(g_dir),
        velocities=velocities,
        bias=bias,
        cost=float(sol.cost),
    )
