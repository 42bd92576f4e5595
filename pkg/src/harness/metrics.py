"""Trajectory association, closed-form alignment and absolute trajectory error."""

import logging
from dataclasses import dataclass

import numpy as np

from config import AlignmentMode
from geometry.pose import Pose
from harness.errors import InsufficientAssociationError
from harness.io import StampedTrajectory

logger = logging.getLogger(__name__)

MAX_TIME_DIFFERENCE = 0.01
MIN_ALIGNMENT_PAIRS = 3


@dataclass(frozen=True, eq=False)
class Alignment:
    """x_gt ~= scale * R x_est + t."""

    transform: Pose
    scale: float = 1.0
    pairs: int = 0

    def apply(self, trajectory: StampedTrajectory) -> StampedTrajectory:
        return trajectory.transformed(self.transform, self.scale)


def associate(
    est: StampedTrajectory, gt: StampedTrajectory, max_dt: float = MAX_TIME_DIFFERENCE
) -> list[tuple[int, int]]:
    """(est index, gt index) of nearest-timestamp pairs within max_dt.

    Each ground-truth pose is used at most once; when two estimates compete
    for it the closer one wins.
    """
    if not len(est) or not len(gt):
        return []
    gt_t = gt.timestamps
    candidates = []
    for i, t in enumerate(est.timestamps):
        j = int(np.searchsorted(gt_t, t))
        best = min(
            (k for k in (j - 1, j) if 0 <= k < len(gt_t)),
            key=lambda k: abs(gt_t[k] - t),
        )
        dt = abs(gt_t[best] - t)
        if dt <= max_dt:
            candidates.append((dt, i, best))
    pairs, used = [], set()
    for _, i, j in sorted(candidates):
        if j not in used:
            used.add(j)
            pairs.append((i, j))
    return sorted(pairs)


def umeyama(source: np.ndarray, target: np.ndarray, with_scale: bool) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares (R, t, s) minimizing sum |target - (s R source + t)|^2."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    cov = xt.T @ xs / len(source)
    u, d, vt = np.linalg.svd(cov)
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rotation = u @ sign @ vt
    scale = 1.0
    if with_scale:
        var_s = float((xs**2).sum() / len(source))
        scale = float(np.trace(np.diag(d) @ sign) / var_s) if var_s > 0 else 1.0
    translation = mu_t - scale * rotation @ mu_s
    return rotation, translation, scale


def estimate_alignment(
    est: StampedTrajectory,
    gt: StampedTrajectory,
    mode: AlignmentMode = AlignmentMode.SE3,
    max_dt: float = MAX_TIME_DIFFERENCE,
) -> Alignment:
    """Closed-form rigid or similarity alignment of est onto gt.

    Raises:
        InsufficientAssociationError: fewer than three associated pairs.
    """
    pairs = associate(est, gt, max_dt)
    if len(pairs) < MIN_ALIGNMENT_PAIRS:
        raise InsufficientAssociationError(len(pairs), MIN_ALIGNMENT_PAIRS)
    source = est.positions[[i for i, _ in pairs]]
    target = gt.positions[[j for _, j in pairs]]
    rotation, translation, scale = umeyama(source, target, with_scale=AlignmentMode(mode) == AlignmentMode.SIM3)
    return Alignment(Pose(rotation, translation), scale, len(pairs))


def align_trajectories(
    est: StampedTrajectory,
    gt: StampedTrajectory,
    mode: AlignmentMode = AlignmentMode.SE3,
    max_dt: float = MAX_TIME_DIFFERENCE,
) -> StampedTrajectory:
    return estimate_alignment(est, gt, mode, max_dt).apply(est)


def ate_rmse(est_aligned: StampedTrajectory, gt: StampedTrajectory, max_dt: float = MAX_TIME_DIFFERENCE) -> float:
    """RMSE over associated frames of |trans(T_gt^-1 T_est)|.

    Raises:
        InsufficientAssociationError: no pose pairs could be associated.
    """
    pairs = associate(est_aligned, gt, max_dt)
    if not pairs:
        raise InsufficientAssociationError(0, 1)
    errors = np.array(
        [np.linalg.norm((gt.poses[j].inverse() @ est_aligned.poses[i]).translation) for i, j in pairs]
    )
    return float(np.sqrt(np.mean(errors**2)))


def evaluate_ate(
    est: StampedTrajectory,
    gt: StampedTrajectory,
    mode: AlignmentMode = AlignmentMode.SE3,
    max_dt: float = MAX_TIME_DIFFERENCE,
) -> tuple[float, Alignment]:
    alignment = estimate_alignment(est, gt, mode, max_dt)
    rmse = ate_rmse(alignment.apply(est), gt, max_dt)
    logger.debug(f"[Eval] ATE {rmse:.4f} m over {alignment.pairs} pairs (scale {alignment.scale:.4f})")
    return rmse, alignment
