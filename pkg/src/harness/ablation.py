"""Tracking-gain study on rendered pure-rotation sequences.

Every frame pair is tracked twice from the same detections: once with the
gyro prediction and once with a zero-motion prediction. A separate check
warps one rendered view by a known small homography and measures how many
points LK puts back within half a pixel.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from config import AppConfig
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from geometry.so3 import so3_exp
from harness.raster import RasterWorld, apply_homography, warp_image
from imu.simulation import simulate_measurements
from imu.trajectory import CAMERA_BASE, ConstantSpinTrajectory, TransformedTrajectory
from imu.types import ImuBias, ImuNoiseModel
from tracking.features import detect_keypoints, keypoints_to_array
from tracking.flow import MatchStatus, lk_track
from tracking.geometric import rotation_homography
from tracking.image import build_pyramid
from tracking.tracker import TrackerState, TrackingFrame, track_flow

logger = logging.getLogger(__name__)

WARP_TOLERANCE_PX = 0.5


@dataclass(frozen=True)
class AblationFrame:
    frame_id: int
    reference_keypoints: int
    tracked_imu: int
    tracked_zero: int

    def row(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "reference_keypoints": self.reference_keypoints,
            "tracked_imu": self.tracked_imu,
            "tracked_zero": self.tracked_zero,
        }


@dataclass
class AblationReport:
    degrees_per_frame: float
    frames: list[AblationFrame] = field(default_factory=list)
    warp_points: int = 0
    warp_recovered: int = 0

    @property
    def imu_win_ratio(self) -> float:
        """Share of frames where the gyro-predicted run tracked strictly more points."""
        if not self.frames:
            return 0.0
        return sum(f.tracked_imu > f.tracked_zero for f in self.frames) / len(self.frames)

    @property
    def warp_recovery_ratio(self) -> float:
        return self.warp_recovered / self.warp_points if self.warp_points else 0.0

    def passed(self, min_win_ratio: float = 0.8, min_warp_ratio: float = 0.95) -> bool:
        return self.imu_win_ratio >= min_win_ratio and self.warp_recovery_ratio >= min_warp_ratio

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(AblationFrame.__dataclass_fields__))
            writer.writeheader()
            writer.writerows(frame.row() for frame in self.frames)

    def summary(self) -> str:
        imu = np.mean([f.tracked_imu for f in self.frames]) if self.frames else 0.0
        zero = np.mean([f.tracked_zero for f in self.frames]) if self.frames else 0.0
        return (
            f"rotation {self.degrees_per_frame:.1f} deg/frame over {len(self.frames)} frames\n"
            f"  mean tracked: gyro {imu:.1f}, zero-motion {zero:.1f}\n"
            f"  gyro better in {self.imu_win_ratio:.0%} of frames\n"
            f"  known warp recovered within {WARP_TOLERANCE_PX} px: "
            f"{self.warp_recovered}/{self.warp_points} ({self.warp_recovery_ratio:.1%})\n"
        )


def spin_trajectory(config: AppConfig, degrees_per_frame: float, duration: float) -> TransformedTrajectory:
    """Camera panning about the vertical axis at a fixed point in the room."""
    rate = math.radians(degrees_per_frame) * config.camera.fps
    centre = np.array([0.0, 0.0, config.scenario.height])
    spin = ConstantSpinTrajectory(omega=(0.0, rate, 0.0), duration=duration)
    return TransformedTrajectory(spin, Pose(CAMERA_BASE, centre))


def known_warp_recovery(
    config: AppConfig, world: RasterWorld, pose: Pose, displacement_px: float = 6.0
) -> tuple[int, int]:
    """(points checked, points within tolerance) for a pan that moves the image by `displacement_px`."""
    intr = CameraIntrinsics.from_config(config.camera)
    trk = config.tracking
    image = world.render(pose, intr)
    delta_R = so3_exp(np.array([0.0, displacement_px / intr.fx, 0.0]))
    homography = rotation_homography(delta_R, intr)
    warped = warp_image(image, homography)

    pyr_ref = build_pyramid(image, trk.scale_ratio, trk.num_levels)
    pyr_cur = build_pyramid(warped, trk.scale_ratio, trk.num_levels)
    ref_px = keypoints_to_array(detect_keypoints(pyr_ref, trk.target_features, trk.grid_cells, trk.fast_threshold))
    truth = apply_homography(homography, ref_px)
    inside = intr.contains(truth, trk.lk_window) & intr.contains(ref_px, trk.lk_window)
    ref_px, truth = ref_px[inside], truth[inside]
    matches = lk_track(
        pyr_ref,
        pyr_cur,
        ref_px,
        ref_px.copy(),
        window=trk.lk_window,
        max_iters=trk.lk_max_iters,
        max_residual=trk.lk_max_residual,
        min_eigen=trk.lk_min_eigen,
    )
    recovered = sum(
        m.status == MatchStatus.TRACKED and np.linalg.norm(m.cur_px - truth[m.ref_index]) <= WARP_TOLERANCE_PX
        for m in matches
    )
    return len(ref_px), int(recovered)


def run_rotation_ablation(
    config: AppConfig, degrees_per_frame: float = 8.0, frames: int = 20, seed: int | None = None
) -> AblationReport:
    """Gyro-predicted vs zero-motion LK on a rendered pan of `degrees_per_frame`."""
    fps = config.camera.fps
    duration = frames / fps
    seed = config.scenario.seed if seed is None else seed
    intr = CameraIntrinsics.from_config(config.camera)
    trk = config.tracking
    world = RasterWorld(config.scenario.room_size, config.scenario.texture_seed)
    trajectory = spin_trajectory(config, degrees_per_frame, duration)
    noise = ImuNoiseModel.from_config(config.imu, noisy=False)
    imu = simulate_measurements(trajectory, noise, ImuBias(), config.imu.rate, seed, 0.0, duration)
    margin = 1.0 / config.imu.rate

    report = AblationReport(degrees_per_frame)
    ref_pose = trajectory.pose(0.0)
    ref_pyr = build_pyramid(world.render(ref_pose, intr), trk.scale_ratio, trk.num_levels)
    for k in range(1, frames + 1):
        t_ref, t_cur = (k - 1) / fps, k / fps
        cur_pose = trajectory.pose(t_cur)
        cur_pyr = build_pyramid(world.render(cur_pose, intr), trk.scale_ratio, trk.num_levels)
        keypoints = keypoints_to_array(
            detect_keypoints(ref_pyr, trk.target_features, trk.grid_cells, trk.fast_threshold)
        )
        ref = TrackingFrame(k - 1, t_ref, keypoints, pyramid=ref_pyr)
        cur = TrackingFrame(k, t_cur, np.zeros((0, 2)), pyramid=cur_pyr)
        batch = [s for s in imu if t_ref - margin <= s.timestamp <= t_cur + margin]
        state = TrackerState(T_wc_ref=ref_pose, gravity=np.asarray(config.imu.gravity, dtype=float))
        with_imu = track_flow(ref, cur, batch, {}, state, intr, trk, use_imu=True)
        zero = track_flow(ref, cur, batch, {}, state, intr, trk, use_imu=False)
        report.frames.append(AblationFrame(k, len(keypoints), with_imu.tracked_count, zero.tracked_count))
        logger.debug(
            f"[Ablation] Frame {k}: {with_imu.tracked_count} tracked with gyro, {zero.tracked_count} without"
        )
        ref_pose, ref_pyr = cur_pose, cur_pyr

    report.warp_points, report.warp_recovered = known_warp_recovery(config, world, trajectory.pose(0.0))
    logger.info(
        f"[Ablation] Gyro prediction wins {report.imu_win_ratio:.0%} of {frames} frames; "
        f"warp recovery {report.warp_recovery_ratio:.1%}"
    )
    return report
