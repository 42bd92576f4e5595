"""Geometric verification: gyro-rotation screening, P3P RANSAC and PnP refinement."""

import logging
import math

import cv2
import numpy as np

from geometry.camera import DEPTH_EPSILON, CameraIntrinsics, projection_jacobian
from geometry.pose import Pose
from geometry.so3 import skew, so3_exp
from tracking.errors import (
    InsufficientCorrespondencesError,
    NoConsensusError,
    PnPDivergenceError,
)
from tracking.flow import Match, MatchStatus

logger = logging.getLogger(__name__)

PARALLAX_ALLOWANCE = 0.1
_RANSAC_CONFIDENCE = 0.999


def rotation_homography(delta_R: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Infinite homography taking reference pixels to current pixels.

    delta_R is the rotation of the current camera expressed in the reference
    camera (R_rc, the preintegrated gyro rotation over the frame interval).
    """
    k = intr.matrix
    return k @ np.asarray(delta_R, dtype=float).T @ np.linalg.inv(k)


def screen_by_rotation(
    matches: list[Match],
    delta_R: np.ndarray,
    intr: CameraIntrinsics,
    threshold: float,
) -> list[Match]:
    """Mark tracked matches that disagree with the gyro-predicted flow as REJECTED_ROTATION.

    A match is kept when its deviation from the infinite-depth rotation flow is
    at most threshold + PARALLAX_ALLOWANCE * |displacement|.
    """
    if not math.isfinite(threshold):
        return list(matches)
    h = rotation_homography(delta_R, intr)
    out = []
    for m in matches:
        if m.status != MatchStatus.TRACKED:
            out.append(m)
            continue
        ref = np.asarray(m.ref_px, dtype=float)
        cur = np.asarray(m.cur_px, dtype=float)
        p = h @ np.array([ref[0], ref[1], 1.0])
        if p[2] <= DEPTH_EPSILON:
            out.append(m.with_status(MatchStatus.REJECTED_ROTATION))
            continue
        deviation = float(np.hypot(cur[0] - p[0] / p[2], cur[1] - p[1] / p[2]))
        allowance = threshold + PARALLAX_ALLOWANCE * float(np.linalg.norm(cur - ref))
        out.append(m if deviation <= allowance else m.with_status(MatchStatus.REJECTED_ROTATION))
    return out


def reprojection_errors(
    T_cw: Pose, points_w: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics
) -> np.ndarray:
    """Pixel distance per correspondence; +inf for points behind the camera."""
    x_c = T_cw.act(np.atleast_2d(points_w))
    z = x_c[:, 2]
    ok = z > DEPTH_EPSILON
    safe_z = np.where(ok, z, 1.0)
    u = intr.fx * x_c[:, 0] / safe_z + intr.cx
    v = intr.fy * x_c[:, 1] / safe_z + intr.cy
    err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
    return np.where(ok, err, np.inf)


def _required_iterations(inlier_ratio: float, sample_size: int = 3) -> float:
    good = inlier_ratio**sample_size
    if good <= 0.0:
        return math.inf
    if good >= 1.0:
        return 0.0
    return math.log(1.0 - _RANSAC_CONFIDENCE) / math.log(1.0 - good)


def _p3p_hypotheses(points_w: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics) -> list[Pose]:
    try:
        count, rvecs, tvecs = cv2.solveP3P(
            points_w.astype(np.float64),
            pixels.astype(np.float64),
            intr.matrix,
            None,
            flags=cv2.SOLVEPNP_P3P,
        )
    except cv2.error:
        return []
    poses = []
    for rvec, tvec in zip(rvecs[:count], tvecs[:count]):
        rotation, _ = cv2.Rodrigues(np.asarray(rvec, dtype=np.float64))
        poses.append(Pose(rotation, np.asarray(tvec, dtype=float).reshape(3)))
    return poses


def ransac_filter(
    points_w: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    iterations: int = 100,
    reproj_threshold: float = 2.0,
    seed: int = 0,
    min_inlier_ratio: float = 0.3,
) -> tuple[np.ndarray, Pose]:
    """P3P-hypothesis RANSAC over 3D-2D correspondences.

    Returns:
        (sorted inlier indices, T_cw). Every returned inlier reprojects under
        the returned pose within reproj_threshold.

    Raises:
        InsufficientCorrespondencesError: fewer than 4 correspondences.
        NoConsensusError: best inlier ratio below min_inlier_ratio.
    """
    points_w = np.atleast_2d(np.asarray(points_w, dtype=float))
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    n = len(points_w)
    if n < 4:
        raise InsufficientCorrespondencesError(n)

    rng = np.random.default_rng(seed)
    best_count, best_pose, best_err = -1, None, None
    limit = iterations
    it = 0
    while it < limit:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        for pose in _p3p_hypotheses(points_w[sample], pixels[sample], intr):
            err = reprojection_errors(pose, points_w, pixels, intr)
            count = int((err < reproj_threshold).sum())
            if count > best_count:
                best_count, best_pose, best_err = count, pose, err
                limit = min(iterations, max(it, math.ceil(_required_iterations(count / n))))

    ratio = max(best_count, 0) / n
    if best_pose is None or ratio < min_inlier_ratio:
        raise NoConsensusError(ratio, min_inlier_ratio)
    inliers = np.flatnonzero(best_err < reproj_threshold)
    logger.debug(f"[Ransac] {len(inliers)}/{n} inliers after {it} iterations")
    return inliers, best_pose


def _pnp_cost(T_cw: Pose, points_w, pixels, intr) -> tuple[float, np.ndarray, np.ndarray]:
    x_c = T_cw.act(points_w)
    front = x_c[:, 2] > DEPTH_EPSILON
    x_c = x_c[front]
    u = intr.fx * x_c[:, 0] / x_c[:, 2] + intr.cx
    v = intr.fy * x_c[:, 1] / x_c[:, 2] + intr.cy
    res = (pixels[front] - np.column_stack([u, v])).reshape(-1)
    return float(res @ res), res, front


def solve_pnp(
    points_w: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    initial: Pose,
    max_iters: int = 20,
    tolerance: float = 1e-8,
) -> Pose:
    """Damped Gauss-Newton refinement of T_cw on the reprojection error.

    The rotation is perturbed on the right (R <- R Exp(dphi)), the translation
    additively. Stops when the update norm drops below `tolerance` or after
    max_iters iterations.

    Raises:
        InsufficientCorrespondencesError: fewer than 4 correspondences.
        PnPDivergenceError: five consecutive damped steps failed to lower the cost.
    """
    points_w = np.atleast_2d(np.asarray(points_w, dtype=float))
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    if len(points_w) < 4:
        raise InsufficientCorrespondencesError(len(points_w))

    pose = initial
    cost, res, front = _pnp_cost(pose, points_w, pixels, intr)
    lam = 1e-6
    rejected = 0
    for _ in range(max_iters):
        if front.sum() < 3:
            raise PnPDivergenceError("Fewer than 3 points in front of the camera")
        pts = points_w[front]
        x_c = pose.act(pts)
        jp = projection_jacobian(intr, x_c)
        d_xc = np.zeros((len(pts), 3, 6))
        d_xc[:, :, 0:3] = -np.einsum("ij,njk->nik", pose.rotation, np.stack([skew(p) for p in pts]))
        d_xc[:, :, 3:6] = np.eye(3)
        jac = -np.einsum("nij,njk->nik", jp, d_xc).reshape(-1, 6)

        hess = jac.T @ jac
        grad = jac.T @ res
        while True:
            damped = hess + lam * np.diag(np.diag(hess) + 1e-12)
            try:
                delta = -np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                delta = -np.linalg.lstsq(damped, grad, rcond=None)[0]
            if np.linalg.norm(delta) < tolerance:
                return pose
            candidate = Pose(pose.rotation @ so3_exp(delta[0:3]), pose.translation + delta[3:6])
            new_cost, new_res, new_front = _pnp_cost(candidate, points_w, pixels, intr)
            if new_cost < cost and new_front.sum() >= front.sum():
                pose, cost, res, front = candidate, new_cost, new_res, new_front
                lam = max(lam * 0.1, 1e-12)
                rejected = 0
                break
            if abs(new_cost - cost) <= 1e-12 * max(cost, 1e-12):
                return pose
            rejected += 1
            lam *= 10.0
            if rejected >= 5:
                raise PnPDivergenceError(f"Cost {cost:.3g} did not decrease in 5 damped steps")
    return pose
