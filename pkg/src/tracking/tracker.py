"""IMU-assisted LK tracking of a frame against its reference frame.

Prediction comes from the uniform motion model before the inertial
parameters are known and from bias-corrected preintegration afterwards.
Predicted keypoints seed LK, gyro rotation screens the flow, and the
surviving map-associated tracks are verified by RANSAC and refined by PnP.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from config import TrackingConfig
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from geometry.so3 import so3_exp
from imu.errors import ImuError, NoSamplesInWindowError
from imu.motion import mean_angular_velocity, predict_pose_umm
from imu.preintegration import ImuBuffer, bias_corrected_deltas, predict_state
from imu.types import ImuBias, ImuSample, NavState
from tracking.errors import (
    InsufficientCorrespondencesError,
    NoConsensusError,
    PnPDivergenceError,
    TrackingLostError,
)
from tracking.flow import Match, MatchStatus, count_status, lk_track, predict_keypoints
from tracking.geometric import ransac_filter, screen_by_rotation, solve_pnp
from tracking.image import Pyramid

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class TrackingFrame:
    """A frame as seen by the tracker.

    Reference frames carry `point_ids` (map point per keypoint, -1 for none).
    Frames without pyramids carry `track_ref`: for each keypoint, the index of
    the reference keypoint it continues.
    """

    frame_id: int
    timestamp: float
    keypoints: np.ndarray
    pyramid: Pyramid | None = None
    point_ids: np.ndarray | None = None
    track_ref: np.ndarray | None = None


@dataclass
class TrackerState:
    """Pose of the reference frame plus what the inertial branch needs."""

    T_wc_ref: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias: ImuBias = field(default_factory=ImuBias)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    inertial_ready: bool = False


@dataclass(eq=False)
class FlowResult:
    matches: list[Match]
    delta_R: np.ndarray
    T_wc_pred: Pose
    used_preintegration: bool

    @property
    def tracked_count(self) -> int:
        return count_status(self.matches, MatchStatus.TRACKED)


@dataclass(eq=False)
class TrackResult:
    pose: Pose  # T_cw
    matches: list[Match]
    tracked_count: int
    inlier_count: int
    T_wc_pred: Pose
    used_preintegration: bool
    track_time_ms: float = 0.0

    def diagnostics(self, frame_id: int) -> dict:
        return {
            "frame_id": frame_id,
            "tracked": self.inlier_count,
            "rejected_rotation": count_status(self.matches, MatchStatus.REJECTED_ROTATION),
            "rejected_ransac": count_status(self.matches, MatchStatus.REJECTED_RANSAC),
            "track_time_ms": round(self.track_time_ms, 3),
        }


def predict_motion(
    state: TrackerState, imu_batch: Sequence[ImuSample], t_ref: float, t_cur: float
) -> tuple[Pose, np.ndarray | None, bool]:
    """(predicted T_wc, gyro rotation R_rc over the interval, preintegration branch taken).

    The rotation is None when no gyro reading covers the interval.
    """
    dt = t_cur - t_ref
    if dt <= 0 or not imu_batch:
        return state.T_wc_ref, None, False

    if state.inertial_ready:
        buffer = ImuBuffer()
        buffer.extend(imu_batch)
        try:
            pre = buffer.preintegrate(t_ref, t_cur, state.bias)
        except ImuError as e:
            logger.debug(f"[Tracker] Preintegration unavailable ({e}); using uniform motion")
        else:
            nav = NavState.from_pose(state.T_wc_ref, state.velocity, state.bias)
            predicted = predict_state(nav, pre, state.gravity)
            delta_R, _, _ = bias_corrected_deltas(pre, state.bias)
            return predicted.pose, delta_R, True

    try:
        omega = mean_angular_velocity(imu_batch, t_ref, t_cur) - state.bias.gyro
    except NoSamplesInWindowError:
        return state.T_wc_ref, None, False
    return predict_pose_umm(state.T_wc_ref, omega, dt), so3_exp(omega * dt), False


def reference_depths(
    ref: TrackingFrame, local_map: Mapping[int, np.ndarray], T_wc_ref: Pose, fallback: float | None
) -> np.ndarray:
    depths = np.full(len(ref.keypoints), np.nan if fallback is None else fallback)
    if ref.point_ids is None or not local_map:
        return depths
    T_cw = T_wc_ref.inverse()
    for i, pid in enumerate(ref.point_ids):
        position = local_map.get(int(pid)) if pid >= 0 else None
        if position is not None:
            depths[i] = T_cw.act(position)[2]
    return depths


def track_flow(
    ref: TrackingFrame,
    cur: TrackingFrame,
    imu_batch: Sequence[ImuSample],
    local_map: Mapping[int, np.ndarray],
    state: TrackerState,
    intr: CameraIntrinsics,
    config: TrackingConfig,
    use_imu: bool = True,
) -> FlowResult:
    """Prediction, LK (or given correspondences) and rotation screening."""
    if use_imu:
        T_wc_pred, delta_R, preint = predict_motion(state, imu_batch, ref.timestamp, cur.timestamp)
    else:
        T_wc_pred, delta_R, preint = state.T_wc_ref, np.eye(3), False

    ref_px = np.asarray(ref.keypoints, dtype=float).reshape(-1, 2)
    if ref.pyramid is not None and cur.pyramid is not None:
        depths = reference_depths(ref, local_map, state.T_wc_ref, config.nominal_depth)
        T_rc = state.T_wc_ref.inverse() @ T_wc_pred
        pred, valid = predict_keypoints(ref_px, depths, T_rc, intr)
        matches = lk_track(
            ref.pyramid,
            cur.pyramid,
            ref_px,
            pred,
            window=config.lk_window,
            max_iters=config.lk_max_iters,
            max_residual=config.lk_max_residual,
            min_eigen=config.lk_min_eigen,
        )
        matches = [m if valid[m.ref_index] else m.with_status(MatchStatus.LOST) for m in matches]
    else:
        cur_px = np.asarray(cur.keypoints, dtype=float).reshape(-1, 2)
        track_ref = np.arange(len(cur_px)) if cur.track_ref is None else np.asarray(cur.track_ref)
        matches = [
            Match(int(r), k, ref_px[int(r)], cur_px[k], MatchStatus.TRACKED)
            for k, r in enumerate(track_ref)
        ]

    if delta_R is None:
        # nothing to screen against without a gyro
        return FlowResult(matches, np.eye(3), T_wc_pred, preint)
    matches = screen_by_rotation(matches, delta_R, intr, config.rotation_threshold)
    return FlowResult(matches, delta_R, T_wc_pred, preint)


def imu_assisted_track(
    ref: TrackingFrame,
    cur: TrackingFrame,
    imu_batch: Sequence[ImuSample],
    local_map: Mapping[int, np.ndarray],
    state: TrackerState,
    intr: CameraIntrinsics,
    config: TrackingConfig,
    seed: int = 0,
    use_imu: bool = True,
) -> TrackResult:
    """Track `cur` against `ref` and solve its pose T_cw in the world frame.

    Raises:
        TrackingLostError: fewer than config.min_tracked_inliers verified inliers.
    """
    started = time.perf_counter()
    flow = track_flow(ref, cur, imu_batch, local_map, state, intr, config, use_imu)
    matches = flow.matches

    corr = []
    if ref.point_ids is not None:
        for k, m in enumerate(matches):
            if m.status != MatchStatus.TRACKED:
                continue
            pid = int(ref.point_ids[m.ref_index])
            if pid >= 0 and pid in local_map:
                corr.append(k)
    if len(corr) < config.min_tracked_inliers:
        raise TrackingLostError(len(corr), config.min_tracked_inliers)

    points_w = np.array([local_map[int(ref.point_ids[matches[k].ref_index])] for k in corr])
    pixels = np.array([matches[k].cur_px for k in corr], dtype=float)
    try:
        inliers, ransac_pose = ransac_filter(
            points_w,
            pixels,
            intr,
            iterations=config.ransac_iterations,
            reproj_threshold=config.ransac_reproj_threshold,
            seed=seed,
            min_inlier_ratio=config.ransac_min_inlier_ratio,
        )
    except (InsufficientCorrespondencesError, NoConsensusError) as e:
        logger.debug(f"[Tracker] Frame {cur.frame_id}: {e}")
        raise TrackingLostError(0, config.min_tracked_inliers) from e

    inlier_set = set(int(i) for i in inliers)
    for j, k in enumerate(corr):
        if j not in inlier_set:
            matches[k] = matches[k].with_status(MatchStatus.REJECTED_RANSAC)
    if len(inliers) < config.min_tracked_inliers:
        raise TrackingLostError(len(inliers), config.min_tracked_inliers)

    try:
        pose = solve_pnp(points_w[inliers], pixels[inliers], intr, ransac_pose)
    except PnPDivergenceError as e:
        logger.warning(f"[Tracker] Frame {cur.frame_id}: PnP refinement failed ({e}), keeping RANSAC pose")
        pose = ransac_pose

    elapsed = (time.perf_counter() - started) * 1000.0
    return TrackResult(
        pose=pose,
        matches=matches,
        tracked_count=flow.tracked_count,
        inlier_count=len(inliers),
        T_wc_pred=flow.T_wc_pred,
        used_preintegration=flow.used_preintegration,
        track_time_ms=elapsed,
    )


class TrackingLog:
    """Per-frame tracking diagnostics, written as CSV."""

    FIELDS = ("frame_id", "tracked", "rejected_rotation", "rejected_ransac", "track_time_ms")

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, row: dict) -> None:
        self.rows.append({k: row.get(k, 0) for k in self.FIELDS})

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)
