"""Global optimization of the cloud map.

`global_optimize` is a full visual-inertial bundle adjustment: one gauge
prior per component, Cauchy reprojection terms for every observation
(virtual keyframes included) and Huber IMU terms between consecutive
keyframes of the same robot. `optimize_pose_graph` is the cheaper path over
relative-pose edges, used after a same-component loop and for large maps.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from cloud.global_map import GlobalMap, KfKey
from config import AppConfig, KernelKind
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from imu.preintegration import bias_walk_information, imu_information
from imu.types import ImuNoiseModel
from optim.errors import SolverDegenerateError
from optim.factors import (
    BiasPriorFactor,
    BiasWalkFactor,
    ImuFactor,
    PriorFactor,
    RelativePoseFactor,
    ReprojectionFactor,
)
from optim.kernels import RobustKernel
from optim.solver import Problem, SolverResult, levenberg_marquardt

logger = logging.getLogger(__name__)

COVISIBILITY_EDGE_MIN = 15
BIAS_PRIOR_WEIGHT = 1.0e2
POSE_GRAPH_INFORMATION = np.array([1.0e4, 1.0e4, 1.0e4, 1.0e2, 1.0e2, 1.0e2])


@dataclass
class OptimizeResult:
    solver: SolverResult
    corrections: dict[int, dict[int, Pose]] = field(default_factory=dict)
    moved_keyframes: int = 0


def _check_gauge(gmap: GlobalMap) -> None:
    for root, robots in gmap.components().items():
        anchor = gmap.anchors.get(root)
        if gmap.keyframes_of(robots) and (anchor is None or anchor not in gmap.keyframes):
            raise SolverDegenerateError(f"Component of robots {robots} has no gauge prior")


def _imu_linked(gmap: GlobalMap) -> set[KfKey]:
    linked = set()
    for kf in gmap.keyframes.values():
        if kf.pre is not None and kf.prev_key in gmap.keyframes and not kf.virtual:
            linked.update((kf.key, kf.prev_key))
    return linked


def _corrections(gmap: GlobalMap, before: dict[KfKey, Pose], tol: float = 1e-6) -> tuple[dict, int]:
    out: dict[int, dict[int, Pose]] = {}
    moved = 0
    for key, old in before.items():
        kf = gmap.keyframes[key]
        if kf.virtual:
            continue
        if old.translation_error(kf.pose) > tol or old.rotation_error_deg(kf.pose) > tol:
            moved += 1
            out.setdefault(kf.robot_id, {})[key[1]] = gmap.edge_frame_pose(kf)
    return out, moved


def _refresh_drift_alignment(gmap: GlobalMap) -> None:
    """Re-place each robot's future keyframes relative to its latest corrected keyframe."""
    for robot_id, key in gmap.last_key.items():
        kf = gmap.keyframes.get(key)
        if kf is not None and not kf.virtual:
            gmap.drift_alignment[robot_id] = kf.pose @ kf.edge_pose.inverse()


def global_optimize(
    gmap: GlobalMap,
    intr: CameraIntrinsics,
    config: AppConfig,
    noise: ImuNoiseModel | None = None,
) -> OptimizeResult:
    """Optimize every keyframe state and map point in place.

    Raises:
        SolverDegenerateError: a component has no gauge prior, or the system is singular.
    """
    _check_gauge(gmap)
    cloud, vio = config.cloud, config.vio
    noise = noise or ImuNoiseModel.from_config(config.imu)
    gravity = np.asarray(config.imu.gravity, dtype=float)
    weights = (config.imu.weight_rotation, config.imu.weight_velocity, config.imu.weight_position)
    linked = _imu_linked(gmap)

    problem = Problem()
    for key, kf in gmap.keyframes.items():
        problem.add_pose(key, kf.state, dim=15 if key in linked else 6)
    for key in gmap.anchor_keys():
        problem.add_factor(PriorFactor(key, gmap.keyframes[key].pose, cloud.prior_weight))

    visual = RobustKernel(KernelKind.CAUCHY, vio.cauchy_delta)
    scale_ratio = config.tracking.scale_ratio
    for pid, point in gmap.points.items():
        if not point.observations:
            continue
        problem.add_point(pid, point.position, fixed=len(point.observations) < 2)
        for key, index in sorted(point.observations.items()):
            kf = gmap.keyframes[key]
            sigma = vio.obs_sigma_px * scale_ratio ** int(kf.levels[index])
            problem.add_factor(
                ReprojectionFactor(key, pid, kf.keypoints[index], intr, sigma, visual, kf.offset(index))
            )

    inertial = RobustKernel(KernelKind.HUBER, vio.huber_delta)
    bias_info = np.full(6, BIAS_PRIOR_WEIGHT)
    for key in linked:
        problem.add_factor(BiasPriorFactor(key, gmap.keyframes[key].state.bias, bias_info))
    for kf in gmap.keyframes.values():
        if kf.key not in linked or kf.prev_key not in linked or kf.pre is None:
            continue
        problem.add_factor(
            ImuFactor(kf.prev_key, kf.key, kf.pre, gravity, imu_information(kf.pre, noise, weights), inertial)
        )
        problem.add_factor(
            BiasWalkFactor(
                kf.prev_key, kf.key, bias_walk_information(kf.pre.dt_total, noise, config.imu.weight_bias)
            )
        )

    before = {key: kf.pose for key, kf in gmap.keyframes.items()}
    solver = levenberg_marquardt(problem, max_iters=cloud.max_iters, tag="GlobalBA")
    for key, kf in gmap.keyframes.items():
        kf.state = problem.poses[key]
    for pid, point in gmap.points.items():
        if pid in problem.points and pid not in problem.fixed:
            point.position = problem.points[pid]
            point.optimized = True

    corrections, moved = _corrections(gmap, before)
    _refresh_drift_alignment(gmap)
    logger.info(
        f"[Cloud] Global optimization over {len(gmap)} keyframes and {len(problem.points)} points: "
        f"cost {solver.initial_cost:.1f} -> {solver.final_cost:.1f}, {moved} keyframes moved"
    )
    return OptimizeResult(solver, corrections, moved)


def optimize_pose_graph(gmap: GlobalMap, config: AppConfig) -> OptimizeResult:
    """Relative-pose graph over odometry, strong covisibility and loop edges.

    Edges other than loops are measured from the current poses; after the
    solve each map point moves rigidly with its first observing keyframe.

    Raises:
        SolverDegenerateError: a component has no gauge prior.
    """
    _check_gauge(gmap)
    problem = Problem()
    for key, kf in gmap.keyframes.items():
        problem.add_pose(key, kf.state, dim=6)
    for key in gmap.anchor_keys():
        problem.add_factor(PriorFactor(key, gmap.keyframes[key].pose, config.cloud.prior_weight))

    seen: set[tuple[KfKey, KfKey]] = set()

    def add_edge(a: KfKey, b: KfKey, measured: Pose) -> None:
        pair = (min(a, b), max(a, b))
        if a == b or pair in seen:
            return
        seen.add(pair)
        problem.add_factor(RelativePoseFactor(a, b, measured, POSE_GRAPH_INFORMATION))

    for edge in gmap.loops:
        add_edge(edge.query, edge.candidate, edge.relative)
    for kf in gmap.keyframes.values():
        if kf.prev_key in gmap.keyframes:
            prev = gmap.keyframes[kf.prev_key]
            add_edge(prev.key, kf.key, prev.pose.inverse() @ kf.pose)
        for other, weight in gmap.covisibility(kf.key).items():
            if weight >= COVISIBILITY_EDGE_MIN and other < kf.key:
                add_edge(other, kf.key, gmap.keyframes[other].pose.inverse() @ kf.pose)

    before = {key: kf.pose for key, kf in gmap.keyframes.items()}
    solver = levenberg_marquardt(problem, max_iters=config.cloud.max_iters, tag="PoseGraph")
    order = {key: i for i, key in enumerate(gmap.keyframes)}
    for key, kf in gmap.keyframes.items():
        new = problem.poses[key]
        kf.state = kf.state.with_pose(new.pose)
    for point in gmap.points.values():
        if not point.observations:
            continue
        ref = min(point.observations, key=lambda k: order[k])
        delta = gmap.keyframes[ref].pose @ before[ref].inverse()
        point.position = delta.act(point.position)

    corrections, moved = _corrections(gmap, before)
    _refresh_drift_alignment(gmap)
    logger.info(
        f"[Cloud] Pose graph over {len(gmap)} keyframes and {len(seen)} edges: "
        f"cost {solver.initial_cost:.1f} -> {solver.final_cost:.1f}"
    )
    return OptimizeResult(solver, corrections, moved)
