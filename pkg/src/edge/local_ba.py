"""Sliding-window visual-inertial bundle adjustment over the local map."""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import KernelKind, VioConfig
from edge.local_map import LocalMap
from geometry.camera import CameraIntrinsics
from geometry.errors import PointBehindCameraError
from imu.preintegration import bias_walk_information, imu_information
from imu.types import ImuNoiseModel
from optim.errors import SolverError
from optim.factors import BiasWalkFactor, ImuFactor, ReprojectionFactor, reprojection_residual
from optim.kernels import RobustKernel
from optim.solver import Problem, SolverResult, levenberg_marquardt

logger = logging.getLogger(__name__)

# 95% quantile of chi-square with 2 dof
OUTLIER_CHI2 = 5.991


@dataclass
class LocalBAResult:
    window: list[int]
    fixed: list[int]
    solver: SolverResult | None = None
    outliers_removed: int = 0
    points_removed: int = 0
    updated_points: list[int] = field(default_factory=list)


def pose_key(kf_id: int) -> tuple[str, int]:
    return ("kf", kf_id)


def point_key(point_id: int) -> tuple[str, int]:
    return ("pt", point_id)


def level_sigma(base_sigma: float, level: int, scale_ratio: float) -> float:
    return base_sigma * scale_ratio ** int(level)


def local_ba(
    local_map: LocalMap,
    intr: CameraIntrinsics,
    cfg: VioConfig,
    noise: ImuNoiseModel,
    gravity: np.ndarray,
    inertial: bool,
    scale_ratio: float = 1.2,
    imu_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LocalBAResult:
    """Optimize the newest cfg.window_size keyframes and the points they observe.

    Covisible keyframes outside the window enter with fixed poses. Visual-only
    windows keep at least two fixed poses (pose and scale gauge), inertial
    ones at least one. On a degenerate system the map is left unchanged.
    """
    window_kfs = local_map.recent(cfg.window_size)
    window = [kf.kf_id for kf in window_kfs]
    if not window:
        return LocalBAResult([], [])
    in_window = set(window)

    point_ids: set[int] = set()
    for kf in window_kfs:
        point_ids.update(int(p) for p in kf.point_ids if p >= 0)
    fixed = set()
    for pid in point_ids:
        fixed.update(k for k in local_map.points[pid].observations if k not in in_window)
    if inertial:
        first = window_kfs[0]
        if first.prev_kf_id is not None and first.prev_kf_id in local_map.keyframes:
            fixed.add(first.prev_kf_id)

    required = 1 if inertial else 2
    order = list(window)
    while len(fixed) < required and len(order) > 1:
        kf_id = order.pop(0)
        fixed.add(kf_id)
    free = [k for k in window if k not in fixed]
    if not free:
        return LocalBAResult(window, sorted(fixed))

    problem = Problem()
    dim = 15 if inertial else 6
    for kf_id in sorted(fixed) + free:
        problem.add_pose(pose_key(kf_id), local_map.keyframes[kf_id].state, dim=dim, fixed=kf_id in fixed)
    involved = set(fixed) | set(free)

    visual_kernel = RobustKernel(KernelKind.CAUCHY, cfg.cauchy_delta)
    for pid in sorted(point_ids):
        point = local_map.points[pid]
        obs = [(k, i) for k, i in sorted(point.observations.items()) if k in involved]
        problem.add_point(point_key(pid), point.position, fixed=len(obs) < 2)
        for kf_id, index in obs:
            kf = local_map.keyframes[kf_id]
            sigma = level_sigma(cfg.obs_sigma_px, kf.levels[index], scale_ratio)
            problem.add_factor(
                ReprojectionFactor(pose_key(kf_id), point_key(pid), kf.keypoints[index], intr, sigma, visual_kernel)
            )

    if inertial:
        imu_kernel = RobustKernel(KernelKind.HUBER, cfg.huber_delta)
        for kf_id in free:
            kf = local_map.keyframes[kf_id]
            if kf.pre is None or kf.prev_kf_id not in involved:
                continue
            problem.add_factor(
                ImuFactor(
                    pose_key(kf.prev_kf_id),
                    pose_key(kf_id),
                    kf.pre,
                    gravity,
                    imu_information(kf.pre, noise, imu_weights),
                    imu_kernel,
                )
            )
            problem.add_factor(
                BiasWalkFactor(
                    pose_key(kf.prev_kf_id), pose_key(kf_id), bias_walk_information(kf.pre.dt_total, noise)
                )
            )

    result = LocalBAResult(window, sorted(fixed))
    try:
        result.solver = levenberg_marquardt(problem, max_iters=cfg.max_iters, tag="LocalBA")
    except SolverError as e:
        logger.warning(f"[LocalBA] Window {window[0]}..{window[-1]} left unchanged: {e}")
        return result

    for kf_id in free:
        local_map.keyframes[kf_id].state = problem.poses[pose_key(kf_id)]
    for pid in point_ids:
        if point_key(pid) not in problem.fixed:
            local_map.points[pid].position = problem.points[point_key(pid)]
            result.updated_points.append(pid)

    result.outliers_removed = _drop_outliers(local_map, point_ids, involved, intr, cfg, scale_ratio)
    result.points_removed = local_map.prune_points()
    result.updated_points = [p for p in result.updated_points if p in local_map.points]
    logger.debug(
        f"[LocalBA] {len(free)} free / {len(fixed)} fixed keyframes, {len(point_ids)} points, "
        f"{result.outliers_removed} outlier observations dropped"
    )
    return result


def _drop_outliers(local_map, point_ids, involved, intr, cfg, scale_ratio) -> int:
    removed = 0
    for pid in sorted(point_ids):
        point = local_map.points.get(pid)
        if point is None:
            continue
        for kf_id, index in list(point.observations.items()):
            if kf_id not in involved:
                continue
            kf = local_map.keyframes[kf_id]
            sigma = level_sigma(cfg.obs_sigma_px, kf.levels[index], scale_ratio)
            try:
                e, _, _ = reprojection_residual(kf.state, point.position, kf.keypoints[index], intr)
                bad = float(e @ e) / (sigma * sigma) > OUTLIER_CHI2
            except PointBehindCameraError:
                bad = True
            if bad:
                local_map.remove_observation(pid, kf_id)
                removed += 1
    return removed
