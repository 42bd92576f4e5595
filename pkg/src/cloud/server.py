"""Cloud node: owns the global map and serializes every mutation through a job queue."""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from cloud.backbone import map_backbone_profile
from cloud.culling import cull_redundant_keyframes
from cloud.errors import CloudError, InsufficientInliersError
from cloud.global_map import GlobalMap, LoopEdge
from cloud.loop import compute_relative_pose, detect_loop
from cloud.merge import fuse_duplicates, merge_maps, neighbourhood
from cloud.optimize import OptimizeResult, global_optimize, optimize_pose_graph
from codec.errors import ConfigMismatchError
from codec.vocabulary import Vocabulary
from config import AppConfig
from edge.server import Link
from geometry.camera import CameraIntrinsics
from imu.types import ImuNoiseModel
from optim.errors import SolverError
from wire.errors import QueueFullError, SessionClosedError
from wire.message import Message, MessageType
from wire.payloads import KeyframeRecord, MapPointUpdate, PoseCorrection, SessionSetup

logger = logging.getLogger(__name__)


class JobKind(str, Enum):
    SETUP = "setup"
    KEYFRAME = "keyframe"
    POINTS = "points"


@dataclass
class CloudCounters:
    keyframes: int = 0
    loop_candidates: int = 0
    loops_rejected: int = 0
    merges: int = 0
    optimizations: int = 0
    pose_corrections: int = 0
    culled: int = 0
    virtual_keyframes: int = 0
    events: list[str] = field(default_factory=list)


class CloudServer:
    """Single owner of the GlobalMap.

    Messages are queued as jobs and applied one at a time by run_pending();
    loop handling and optimization run inside the keyframe job that
    triggered them.
    """

    def __init__(self, config: AppConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        self.intr = CameraIntrinsics.from_config(config.camera)
        self.noise = ImuNoiseModel.from_config(config.imu)
        self.map = GlobalMap()
        self.counters = CloudCounters()
        self.link: Link | None = None
        self.rejected: set[int] = set()
        self._jobs: deque[tuple[JobKind, int, bytes]] = deque()
        self._outbox: deque[tuple[MessageType, bytes, int]] = deque()
        self._last_loop_time: dict[int, float] = {}

    def attach(self, link: Link) -> None:
        self.link = link

    @property
    def merged(self) -> bool:
        robots = self.map.robots()
        return len(robots) > 1 and len(self.map.components()) == 1

    def submit(self, msg: Message) -> None:
        kinds = {
            MessageType.SESSION_SETUP: JobKind.SETUP,
            MessageType.KEYFRAME: JobKind.KEYFRAME,
            MessageType.MAP_POINT_UPDATE: JobKind.POINTS,
        }
        kind = kinds.get(msg.msg_type)
        if kind is None:
            logger.warning(f"[Cloud] Ignoring unexpected {msg.msg_type.name} for robot {msg.robot_id}")
            return
        self._jobs.append((kind, msg.robot_id, msg.payload))

    def poll(self) -> int:
        """Queue what the link delivered, run every pending job and flush replies."""
        if self.link is not None:
            for msg in self.link.receive():
                self.submit(msg)
        done = self.run_pending()
        self._drain()
        return done

    def run_pending(self) -> int:
        done = 0
        while self._jobs:
            kind, robot_id, payload = self._jobs.popleft()
            if robot_id in self.rejected:
                continue
            try:
                if kind == JobKind.SETUP:
                    self._on_setup(robot_id, SessionSetup.from_bytes(payload))
                elif kind == JobKind.KEYFRAME:
                    self.on_keyframe(robot_id, KeyframeRecord.from_bytes(payload))
                else:
                    self.map.apply_point_update(robot_id, MapPointUpdate.from_bytes(payload))
            except (CloudError, SolverError, ValueError) as e:
                logger.error(f"[Cloud] {kind.value} job for robot {robot_id} failed: {e}")
            done += 1
        return done

    def _on_setup(self, robot_id: int, setup: SessionSetup) -> None:
        if setup.vocab_fingerprint != self.vocab.fingerprint:
            self.rejected.add(robot_id)
            raise ConfigMismatchError(self.vocab.fingerprint, setup.vocab_fingerprint)
        logger.info(f"[Cloud] Robot {robot_id} registered")

    def on_keyframe(self, robot_id: int, record: KeyframeRecord) -> None:
        kf = self.map.add_keyframe(robot_id, record)
        self.counters.keyframes += 1
        candidate = detect_loop(kf.key, self.map, self.config.cloud)
        if candidate is None:
            return
        self.counters.loop_candidates += 1
        same = self.map.same_component(kf.key, candidate.key)
        last = self._last_loop_time.get(robot_id)
        if same and last is not None and kf.timestamp - last < self.config.cloud.loop_cooldown:
            logger.debug(f"[Cloud] Loop {kf.key} <-> {candidate.key} skipped during cooldown")
            return
        try:
            relative, inliers = compute_relative_pose(
                kf.key,
                candidate.key,
                self.map,
                self.intr,
                self.config.cloud,
                self.config.tracking,
                self.config.vio.match_max_hamming,
                self.config.vio.match_ratio,
            )
        except InsufficientInliersError as e:
            self.counters.loops_rejected += 1
            logger.debug(f"[Cloud] Loop {kf.key} <-> {candidate.key} rejected: {e}")
            return
        self._last_loop_time[robot_id] = kf.timestamp
        self.close_loop(LoopEdge(kf.key, candidate.key, relative, inliers))

    def close_loop(self, edge: LoopEdge) -> OptimizeResult | None:
        """Record a verified loop, then merge or correct drift and re-optimize."""
        self.map.loops.append(edge)
        kind = "inter-robot" if edge.inter_robot else "intra-robot"
        logger.info(f"[Cloud] {kind} loop {edge.query} <-> {edge.candidate} with {edge.inliers} inliers")
        self.counters.events.append(f"loop {edge.query} {edge.candidate} {edge.inliers}")
        if merge_maps(self.map, edge, self.intr, self.config.cloud) is not None:
            self.counters.merges += 1
            self.counters.events.append(f"merge {sorted(self.map.robots())}")
        else:
            try:
                self._send_corrections(optimize_pose_graph(self.map, self.config))
            except SolverError as e:
                logger.warning(f"[Cloud] Pose graph after loop {edge.query} skipped: {e}")
            fuse_duplicates(
                self.map,
                neighbourhood(self.map, edge.query),
                neighbourhood(self.map, edge.candidate),
                self.intr,
                self.config.cloud,
            )
        if self.config.cloud.pose_graph_only:
            return None
        return self.optimize()

    def optimize(self) -> OptimizeResult | None:
        try:
            result = global_optimize(self.map, self.intr, self.config, self.noise)
        except SolverError as e:
            logger.warning(f"[Cloud] Global optimization skipped: {e}")
            return None
        self.counters.optimizations += 1
        self._send_corrections(result)
        return result

    def _send_corrections(self, result: OptimizeResult) -> None:
        for robot_id, poses in sorted(result.corrections.items()):
            if poses:
                self._outbox.append((MessageType.POSE_CORRECTION, PoseCorrection(poses).to_bytes(), robot_id))
                self.counters.pose_corrections += 1

    def _drain(self) -> None:
        if self.link is None:
            self._outbox.clear()
            return
        while self._outbox and self.link.can_send():
            msg_type, payload, robot_id = self._outbox[0]
            try:
                self.link.send(msg_type, payload, robot_id)
            except QueueFullError:
                break
            except SessionClosedError as e:
                logger.error(f"[Cloud] Dropping {len(self._outbox)} pose corrections: {e}")
                self._outbox.clear()
                break
            self._outbox.popleft()

    @property
    def pending_outbound(self) -> int:
        return len(self._outbox) + len(self._jobs)

    def finalize(self) -> OptimizeResult | None:
        """Cull, profile the backbone and run the closing optimization."""
        self.run_pending()
        cfg = self.config.cloud
        self.counters.culled = cull_redundant_keyframes(self.map, cfg)
        if cfg.mbp_enabled:
            backbone = map_backbone_profile(self.map, self.intr, cfg)
            self.counters.virtual_keyframes = len(backbone.virtual)
        if not self.map.keyframes:
            return None
        if cfg.pose_graph_only:
            try:
                result = optimize_pose_graph(self.map, self.config)
            except SolverError as e:
                logger.warning(f"[Cloud] Closing pose graph skipped: {e}")
                return None
            self._send_corrections(result)
        else:
            result = self.optimize()
        self._drain()
        return result

    def trajectory(self, robot_id: int) -> list:
        return self.map.trajectory(robot_id)

    def trajectories(self) -> dict[int, list]:
        return {r: self.map.trajectory(r) for r in self.map.robots()}

    def dump_map(self, path: str | Path) -> None:
        self.map.dump(path)

    def summary(self) -> dict:
        return {
            **self.map.stats(),
            "merged": self.merged,
            "loop_candidates": self.counters.loop_candidates,
            "loops_rejected": self.counters.loops_rejected,
            "merges": self.counters.merges,
            "optimizations": self.counters.optimizations,
            "culled": self.counters.culled,
        }
