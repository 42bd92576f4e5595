"""Synthetic multi-robot scenarios.

All robots share one world frame and one landmark cloud scattered near the
walls of a box room. Every landmark carries a fixed descriptor (a noisy copy
of one of a set of prototype descriptors), a fixed orientation bin and a
fixed selection rank. A frame observes the visible landmarks of lowest rank,
so tracks persist from frame to frame the way detector output would.

Two fidelities share the same trajectories and IMU streams: feature mode
emits observations directly, raster mode renders the textured room.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from config import AppConfig, ScenarioConfig, ScenarioMode, TrajectoryKind
from geometry.camera import CameraIntrinsics, project_points
from geometry.pose import Pose
from harness.asl import write_asl_streams
from harness.io import StampedTrajectory, write_tum
from harness.raster import RasterWorld
from imu.simulation import simulate_measurements
from imu.trajectory import CircleTrajectory, LissajousTrajectory, Trajectory, WaypointTrajectory
from imu.types import ImuBias, ImuNoiseModel, ImuSample
from tracking.frontend import CameraFrame, FeatureObservations
from tracking.image import save_gray

logger = logging.getLogger(__name__)

IMAGE_MARGIN = 8.0
MIN_DEPTH = 0.2
WALL_INSET = 1.5
WAYPOINTS_PER_LAP = 8


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def flip_bits(descriptors: np.ndarray, probability: float, rng: np.random.Generator) -> np.ndarray:
    """Flip every bit independently with `probability`."""
    descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.uint8))
    if probability <= 0 or descriptors.size == 0:
        return descriptors.copy()
    bits = np.unpackbits(descriptors, axis=1)
    mask = (rng.random(bits.shape) < probability).astype(np.uint8)
    return np.packbits(bits ^ mask, axis=1)


@dataclass(eq=False)
class LandmarkCloud:
    positions: np.ndarray
    descriptors: np.ndarray
    orientation_bins: np.ndarray
    ranks: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


def generate_landmarks(
    cfg: ScenarioConfig, prototypes: np.ndarray, n_theta: int, rng: np.random.Generator
) -> LandmarkCloud:
    """Landmarks within WALL_INSET of the four walls, spread uniformly by wall length."""
    n = cfg.landmark_count
    sx, sy, sz = cfg.room_size
    lengths = np.array([sy, sy, sx, sx], dtype=float)
    wall = rng.choice(4, size=n, p=lengths / lengths.sum())
    along = rng.uniform(-0.5, 0.5, n)
    height = rng.uniform(0.05, 0.95, n) * sz
    inset = rng.uniform(0.0, WALL_INSET, n)

    positions = np.zeros((n, 3))
    positions[:, 2] = height
    x_walls = wall < 2
    positions[x_walls, 0] = np.where(wall[x_walls] == 0, -sx / 2 + inset[x_walls], sx / 2 - inset[x_walls])
    positions[x_walls, 1] = along[x_walls] * sy
    y_walls = ~x_walls
    positions[y_walls, 1] = np.where(wall[y_walls] == 2, -sy / 2 + inset[y_walls], sy / 2 - inset[y_walls])
    positions[y_walls, 0] = along[y_walls] * sx

    parents = rng.integers(0, len(prototypes), size=n)
    descriptors = flip_bits(prototypes[parents], cfg.descriptor_flip_prob, rng)
    bins = rng.integers(0, n_theta, size=n)
    ranks = rng.permutation(n)
    return LandmarkCloud(positions, descriptors, bins, ranks)


def robot_trajectory(cfg: ScenarioConfig, robot_id: int) -> Trajectory:
    """Trajectory of one robot; robots start half a lap apart so their views overlap later."""
    offset = (robot_id - (cfg.robots - 1) / 2.0) * cfg.robot_spacing
    center = (offset, 0.0, cfg.height)
    phase = 2.0 * math.pi * robot_id / max(cfg.robots, 1)
    if cfg.trajectory == TrajectoryKind.CIRCLE:
        return CircleTrajectory(
            radius=cfg.radius,
            period=cfg.period,
            center=center,
            phase=phase,
            bob_amplitude=0.1,
            bob_period=4.0,
            wobble_amplitude=0.03,
            wobble_period=3.0,
            duration=cfg.duration,
        )
    if cfg.trajectory == TrajectoryKind.LISSAJOUS:
        return LissajousTrajectory(
            center=center,
            amplitudes=(cfg.radius, 0.75 * cfg.radius, 0.3),
            base_period=cfg.period,
            phase=phase,
            duration=cfg.duration,
        )
    laps = cfg.duration / cfg.period
    count = int(math.ceil(laps * WAYPOINTS_PER_LAP)) + 1
    times = np.linspace(0.0, cfg.duration, count)
    angles = phase + 2.0 * math.pi * times / cfg.period
    positions = np.column_stack(
        [center[0] + cfg.radius * np.cos(angles), center[1] + cfg.radius * np.sin(angles), np.full(count, center[2])]
    )
    return WaypointTrajectory(times, positions, angles)


def observe(
    pose: Pose,
    landmarks: LandmarkCloud,
    intr: CameraIntrinsics,
    cfg: ScenarioConfig,
    target: int,
    scale_ratio: float,
    num_levels: int,
    rng: np.random.Generator,
) -> FeatureObservations:
    """The `target` lowest-rank visible landmarks as seen from camera pose T_wc."""
    x_cam = pose.inverse().act(landmarks.positions)
    uv, valid = project_points(intr, x_cam)
    depth = x_cam[:, 2]
    valid &= (depth > MIN_DEPTH) & (depth < cfg.max_range)
    valid[valid] &= intr.contains(uv[valid], IMAGE_MARGIN)
    visible = np.flatnonzero(valid)
    chosen = visible[np.argsort(landmarks.ranks[visible], kind="stable")][:target]

    pixels = uv[chosen]
    if cfg.obs_noise_px > 0 and len(chosen):
        pixels = pixels + rng.normal(0.0, cfg.obs_noise_px, pixels.shape)
        pixels[:, 0] = np.clip(pixels[:, 0], 0.0, intr.width - 1.0)
        pixels[:, 1] = np.clip(pixels[:, 1], 0.0, intr.height - 1.0)
    levels = np.floor(np.log(cfg.max_range / depth[chosen]) / math.log(scale_ratio)).astype(int)
    levels = np.clip(levels, 0, num_levels - 1)
    descriptors = flip_bits(landmarks.descriptors[chosen], cfg.observation_flip_prob, rng)
    return FeatureObservations(
        pixels=pixels,
        levels=levels,
        track_ids=chosen.astype(np.int64),
        descriptors=descriptors.reshape(len(chosen), landmarks.descriptors.shape[1]),
        orientation_bins=landmarks.orientation_bins[chosen],
    )


class RenderedFrames(Sequence):
    """Raster frames rendered on access, so long sequences are never held in memory."""

    def __init__(self, world: RasterWorld, trajectory: Trajectory, times: np.ndarray, intr: CameraIntrinsics):
        self.world = world
        self.trajectory = trajectory
        self.times = times
        self.intr = intr

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        t = float(self.times[index])
        image = self.world.render(self.trajectory.pose(t), self.intr)
        return CameraFrame(int(range(len(self))[index]), t, image=image)


@dataclass(eq=False)
class RobotStream:
    robot_id: int
    trajectory: Trajectory | None
    frames: Sequence[CameraFrame]
    imu: list[ImuSample]
    ground_truth: StampedTrajectory
    initial_bias: ImuBias

    @property
    def duration(self) -> float:
        return self.ground_truth.duration


@dataclass(eq=False)
class Scenario:
    config: AppConfig
    seed: int
    intrinsics: CameraIntrinsics
    landmarks: LandmarkCloud
    prototypes: np.ndarray
    robots: list[RobotStream] = field(default_factory=list)

    @property
    def mode(self) -> ScenarioMode:
        return self.config.scenario.mode

    def observed_landmarks(self, robot_id: int) -> set[int]:
        stream = self.robots[robot_id]
        seen: set[int] = set()
        for frame in stream.frames:
            if frame.observations is not None:
                seen.update(int(t) for t in frame.observations.track_ids)
        return seen

    def overlap(self) -> dict[tuple[int, int], int]:
        """Landmarks observed by both robots of every pair (feature mode only)."""
        seen = [self.observed_landmarks(r.robot_id) for r in self.robots]
        return {
            (a, b): len(seen[a] & seen[b])
            for a in range(len(seen))
            for b in range(a + 1, len(seen))
        }

    def training_descriptors(self, count: int, seed: int | None = None) -> np.ndarray:
        """Fresh descriptors from the scenario's prototype distribution, for vocabulary training."""
        rng = np.random.default_rng(_seed(self.seed if seed is None else seed, 0x766F63))
        parents = rng.integers(0, len(self.prototypes), size=count)
        cfg = self.config.scenario
        return flip_bits(self.prototypes[parents], cfg.descriptor_flip_prob, rng)

    def save(self, out_dir: str | Path) -> Path:
        """Write every robot as an ASL sequence plus a TUM ground truth.

        Raster frames go to cam0/data as PNG; feature observations go to features.npz.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            out / "landmarks.npz",
            positions=self.landmarks.positions,
            descriptors=self.landmarks.descriptors,
            orientation_bins=self.landmarks.orientation_bins,
        )
        for stream in self.robots:
            root = out / f"robot{stream.robot_id}"
            times = stream.ground_truth.timestamps
            names = [f"{k:06d}.png" for k in range(len(times))]
            velocities = np.array([stream.trajectory.velocity(float(t)) for t in times])
            write_asl_streams(root, stream.imu, stream.ground_truth, times, names, velocities)
            write_tum(root / "groundtruth.tum", stream.ground_truth)
            if self.mode == ScenarioMode.RASTER:
                for name, frame in zip(names, stream.frames):
                    save_gray(root / "mav0/cam0/data" / name, frame.image)
            else:
                save_feature_dump(root / "features.npz", stream.frames)
        logger.info(f"[Scenario] Saved {len(self.robots)} robots to {out}")
        return out


def save_feature_dump(path: str | Path, frames: Sequence[CameraFrame]) -> None:
    obs = [f.observations for f in frames]
    np.savez_compressed(
        path,
        frame_ids=np.array([f.frame_id for f in frames], dtype=np.int64),
        timestamps=np.array([f.timestamp for f in frames], dtype=float),
        counts=np.array([len(o) for o in obs], dtype=np.int64),
        pixels=np.concatenate([o.pixels for o in obs]) if obs else np.zeros((0, 2)),
        levels=np.concatenate([o.levels for o in obs]) if obs else np.zeros(0, dtype=int),
        track_ids=np.concatenate([o.track_ids for o in obs]) if obs else np.zeros(0, dtype=np.int64),
        descriptors=np.concatenate([o.descriptors for o in obs]) if obs else np.zeros((0, 32), dtype=np.uint8),
        orientation_bins=np.concatenate([o.orientation_bins for o in obs]) if obs else np.zeros(0, dtype=int),
    )


def load_feature_dump(path: str | Path) -> list[CameraFrame]:
    data = np.load(path)
    bounds = np.concatenate([[0], np.cumsum(data["counts"])])
    frames = []
    for k, (frame_id, t) in enumerate(zip(data["frame_ids"], data["timestamps"])):
        a, b = bounds[k], bounds[k + 1]
        obs = FeatureObservations(
            pixels=data["pixels"][a:b],
            levels=data["levels"][a:b],
            track_ids=data["track_ids"][a:b],
            descriptors=data["descriptors"][a:b],
            orientation_bins=data["orientation_bins"][a:b],
        )
        frames.append(CameraFrame(int(frame_id), float(t), observations=obs))
    return frames


def generate_scenario(config: AppConfig, seed: int | None = None) -> Scenario:
    """Ground truth, IMU and camera streams for every robot; deterministic given seed.

    Raises:
        ConfigValidationError: the configuration is invalid.
    """
    config.validate()
    cfg = config.scenario
    seed = cfg.seed if seed is None else seed
    intr = CameraIntrinsics.from_config(config.camera)
    rng = np.random.default_rng(_seed(seed, 0))
    desc_bytes = config.codec.descriptor_bits // 8
    prototypes = rng.integers(0, 256, size=(cfg.descriptor_prototypes, desc_bytes), dtype=np.uint8)
    landmarks = generate_landmarks(cfg, prototypes, config.codec.n_theta, rng)
    noise = ImuNoiseModel.from_config(config.imu, noisy=cfg.imu_noise)
    world = RasterWorld(cfg.room_size, cfg.texture_seed) if cfg.mode == ScenarioMode.RASTER else None

    n_frames = int(math.floor(cfg.duration * config.camera.fps + 1e-9)) + 1
    times = np.arange(n_frames) / config.camera.fps
    scenario = Scenario(config, seed, intr, landmarks, prototypes)
    for robot_id in range(cfg.robots):
        trajectory = robot_trajectory(cfg, robot_id)
        bias0 = ImuBias(cfg.initial_gyro_bias, cfg.initial_accel_bias) if cfg.imu_noise else ImuBias()
        imu = simulate_measurements(
            trajectory, noise, bias0, config.imu.rate, _seed(seed, robot_id, 1), 0.0, cfg.duration
        )
        poses = [trajectory.pose(float(t)) for t in times]
        if world is not None:
            frames: Sequence[CameraFrame] = RenderedFrames(world, trajectory, times, intr)
        else:
            frame_rng = np.random.default_rng(_seed(seed, robot_id, 2))
            frames = [
                CameraFrame(
                    k,
                    float(t),
                    observations=observe(
                        pose,
                        landmarks,
                        intr,
                        cfg,
                        config.tracking.target_features,
                        config.tracking.scale_ratio,
                        config.tracking.num_levels,
                        frame_rng,
                    ),
                )
                for k, (t, pose) in enumerate(zip(times, poses))
            ]
        scenario.robots.append(
            RobotStream(robot_id, trajectory, frames, imu, StampedTrajectory(times, poses), bias0)
        )
        logger.debug(f"[Scenario] Robot {robot_id}: {n_frames} frames, {len(imu)} IMU samples")
    logger.info(
        f"[Scenario] {cfg.robots} robots, {cfg.duration:.0f} s, {cfg.trajectory.value} trajectories, "
        f"{len(landmarks)} landmarks ({cfg.mode.value} mode, seed {seed})"
    )
    return scenario
