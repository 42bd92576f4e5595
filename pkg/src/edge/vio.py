"""Per-robot visual-inertial odometry session hosted by the edge.

A session decodes the robot's frames, tracks non-keyframes against the local
map with IMU-assisted flow, inserts keyframes with descriptor association,
triangulation and local bundle adjustment, initializes the map, and forwards
keyframes to the cloud once the map is metric and gravity-aligned.

Local mapping runs inline after each keyframe unless a mapper is attached,
in which case located keyframes are handed to it and tracking carries on.
Either way the local map is written from one thread only.
"""

import csv
import logging
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from cloud.bow import bow_similarity, bow_vector
from codec.errors import ConfigMismatchError
from codec.frame_codec import EncodedFrame, FeatureFrame, decode_frame, peek_mode
from codec.geometry import PyramidGeometry
from codec.vocabulary import Vocabulary
from config import AppConfig, FrameMode, KernelKind
from edge.errors import (
    EdgeError,
    ExcitationTooLowError,
    InertialInitError,
    InsufficientParallaxError,
    SessionSetupError,
)
from edge.initialization import inertial_init, triangulate_pairs, visual_init
from edge.local_ba import level_sigma, local_ba
from edge.local_map import Keyframe, LocalMap
from edge.matching import match_by_projection, match_by_words
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from imu.errors import ImuError
from imu.preintegration import (
    ImuBuffer,
    Preintegrated,
    bias_walk_information,
    imu_information,
    predict_state,
    preintegrate,
)
from imu.types import ImuBias, ImuNoiseModel, ImuSample, NavState
from optim.errors import SolverError
from optim.factors import BiasWalkFactor, ImuFactor, ReprojectionFactor
from optim.kernels import RobustKernel
from optim.solver import Problem, levenberg_marquardt
from tracking.errors import (
    InsufficientCorrespondencesError,
    NoConsensusError,
    PnPDivergenceError,
    TrackingLostError,
)
from tracking.flow import MatchStatus
from tracking.geometric import ransac_filter, solve_pnp
from tracking.tracker import TrackerState, TrackingFrame, imu_assisted_track, predict_motion
from wire.message import Message, MessageType
from wire.payloads import (
    ImuBatch,
    InertialParams,
    KeyframeRecord,
    MapPointUpdate,
    PoseCorrection,
    SessionSetup,
)

logger = logging.getLogger(__name__)

Sender = Callable[[MessageType, bytes], None]


class InitPhase(str, Enum):
    UNINITIALIZED = "uninitialized"
    VISUAL_ONLY = "visual_only"
    INERTIAL_DONE = "inertial_done"


class FrameStatus(str, Enum):
    INITIALIZING = "initializing"
    TRACKED = "tracked"
    KEYFRAME = "keyframe"
    RELOCALIZED = "relocalized"
    LOST = "lost"


@dataclass
class InitState:
    phase: InitPhase = InitPhase.UNINITIALIZED
    scale: float | None = None
    gravity_dir: np.ndarray | None = None


@dataclass(eq=False)
class FrameRecord:
    frame_id: int
    timestamp: float
    state: NavState | None
    pixels: np.ndarray
    levels: np.ndarray
    point_ids: np.ndarray
    keyframe: bool = False
    pre: Preintegrated | None = None
    lost: bool = False


@dataclass
class FrameOutcome:
    frame_id: int
    timestamp: float
    mode: FrameMode
    status: FrameStatus
    features: int = 0
    inliers: int = 0
    pose: Pose | None = None
    process_ms: float = 0.0

    def row(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "timestamp": f"{self.timestamp:.6f}",
            "mode": self.mode.value,
            "status": self.status.value,
            "features": self.features,
            "inliers": self.inliers,
            "process_ms": round(self.process_ms, 3),
        }


@dataclass(eq=False)
class _InitReference:
    frame_id: int
    timestamp: float
    pixels: np.ndarray
    levels: np.ndarray
    descriptors: np.ndarray
    words: np.ndarray
    attempts: int = 0


@dataclass
class SessionCounters:
    frames: int = 0
    keyframes: int = 0
    lost: int = 0
    relocalizations: int = 0
    keyframes_forwarded: int = 0
    inertial_params_sent: int = 0
    decoded_features: int = 0


def global_point_id(robot_id: int, point_id: int) -> int:
    return (robot_id << 32) | point_id


def _pixels(frame: FeatureFrame) -> tuple[np.ndarray, np.ndarray]:
    if not frame.keypoints:
        return np.zeros((0, 2)), np.zeros(0, dtype=int)
    px = np.array([[kp.u, kp.v] for kp in frame.keypoints], dtype=float)
    levels = np.array([kp.level for kp in frame.keypoints], dtype=int)
    return px, levels


class VioSession:
    """VIO state of one robot.

    `forward` sends to the cloud and `reply` to the robot; both take a message
    type and an encoded payload. With `decode_only` the session decodes and
    counts frames but runs no estimation.
    """

    def __init__(
        self,
        robot_id: int,
        config: AppConfig,
        vocab: Vocabulary,
        forward: Sender | None = None,
        reply: Sender | None = None,
        decode_only: bool = False,
    ):
        self.robot_id = robot_id
        self.config = config
        self.vio = config.vio
        self.vocab = vocab
        self.intr = CameraIntrinsics.from_config(config.camera)
        self.geom = PyramidGeometry.from_config(config.codec)
        self.noise = ImuNoiseModel.from_config(config.imu)
        self.gravity = np.asarray(config.imu.gravity, dtype=float)
        self.imu_weights = (config.imu.weight_rotation, config.imu.weight_velocity, config.imu.weight_position)
        self.forward = forward or (lambda msg_type, payload: None)
        self.reply = reply or (lambda msg_type, payload: None)
        self.decode_only = decode_only
        self.tag = f"[Edge {robot_id}]"

        self.codec = None
        self.local_map = LocalMap()
        self.init_state = InitState()
        self.imu = ImuBuffer()
        self.bias = ImuBias()
        self.counters = SessionCounters()
        self.trajectory: dict[int, tuple[float, Pose]] = {}
        self.drift: dict[int, tuple[float, float]] = {}
        self.outcomes: list[FrameOutcome] = []
        self.mapper: Callable[[Keyframe], None] | None = None

        self._pending: dict[int, tuple[FeatureFrame, FrameMode]] = {}
        self._next_frame_id: int | None = None
        self._recent: list[FrameRecord] = []
        self._init_ref: _InitReference | None = None
        self._unsent: list[int] = []
        self._sent_bias: ImuBias | None = None
        self._since_refresh = 0

    @property
    def established(self) -> bool:
        return self.codec is not None

    @property
    def phase(self) -> InitPhase:
        return self.init_state.phase

    @property
    def _last(self) -> FrameRecord | None:
        return self._recent[-1] if self._recent else None

    # -- message handling -------------------------------------------------

    def handle(self, msg: Message) -> None:
        payload = msg.payload
        if msg.msg_type == MessageType.SESSION_SETUP:
            self.on_setup(SessionSetup.from_bytes(payload))
        elif msg.msg_type == MessageType.IMU_BATCH:
            self.on_imu(ImuBatch.from_bytes(payload))
        elif msg.msg_type in (MessageType.KEYFRAME, MessageType.NON_KEYFRAME):
            self.on_frame(payload)
        elif msg.msg_type == MessageType.POSE_CORRECTION:
            self.on_pose_correction(PoseCorrection.from_bytes(payload))
        else:
            logger.warning(f"{self.tag} Ignoring unexpected {msg.msg_type.name}")

    def on_setup(self, setup: SessionSetup) -> None:
        """Adopt the robot's calibrated p0 once its fingerprint checks out.

        Raises:
            ConfigMismatchError: the robot's codec or vocabulary differs from ours.
        """
        codec = replace(self.config.codec, p0_kf=setup.p0)
        expected = codec.fingerprint(self.vocab.fingerprint)
        if setup.vocab_fingerprint != self.vocab.fingerprint or setup.fingerprint != expected:
            raise ConfigMismatchError(expected, setup.fingerprint)
        self.codec = codec
        logger.info(f"{self.tag} Session established (p0 {setup.p0:.4f}, fingerprint {expected:08x})")

    def on_imu(self, batch: ImuBatch) -> None:
        self.imu.extend(batch.samples)
        self._release()

    def on_frame(self, payload: bytes) -> None:
        """Decode and queue a frame; frames are processed in id order once IMU covers them."""
        if not self.established:
            raise SessionSetupError(f"Robot {self.robot_id} sent a frame before SessionSetup")
        frame = decode_frame(payload, self.vocab, self.geom, self.codec)
        mode = peek_mode(payload)
        self.counters.decoded_features += frame.n_features
        if self.decode_only:
            self.counters.frames += 1
            self.counters.keyframes += mode == FrameMode.KEYFRAME
            return
        if self._next_frame_id is None:
            self._next_frame_id = frame.frame_id
        self._pending[frame.frame_id] = (frame, mode)
        self._release()

    def on_pose_correction(self, correction: PoseCorrection) -> None:
        """Record how far the cloud moved our keyframes; VIO itself is not corrected."""
        for kf_id, pose in correction.poses.items():
            entry = self.trajectory.get(kf_id)
            if entry is None:
                continue
            self.drift[kf_id] = (entry[1].translation_error(pose), entry[1].rotation_error_deg(pose))
        logger.debug(f"{self.tag} Pose correction for {len(correction.poses)} keyframes")

    def process_frame(self, enc: EncodedFrame | bytes) -> FrameOutcome:
        """Decode and process one frame immediately, bypassing the reorder buffer."""
        if not self.established:
            raise SessionSetupError(f"Robot {self.robot_id} sent a frame before SessionSetup")
        payload = enc.payload if isinstance(enc, EncodedFrame) else bytes(enc)
        frame = decode_frame(payload, self.vocab, self.geom, self.codec)
        return self._process(frame, peek_mode(payload))

    def flush(self) -> None:
        """Process everything still buffered, then forward keyframes held back for initialization."""
        self._release(force=True)
        if self._unsent and self.phase != InitPhase.INERTIAL_DONE:
            logger.warning(
                f"{self.tag} Inertial initialization never succeeded; "
                f"forwarding {len(self._unsent)} visual-only keyframes"
            )
            self._forward_unsent()

    def _release(self, force: bool = False) -> None:
        while self._pending:
            if self._next_frame_id not in self._pending:
                if not force:
                    return
                self._next_frame_id = min(self._pending)
            frame, mode = self._pending[self._next_frame_id]
            if not force and self.imu.last_timestamp < frame.timestamp:
                return
            del self._pending[self._next_frame_id]
            self._next_frame_id += 1
            self._process(frame, mode)

    # -- frame processing -------------------------------------------------

    def _process(self, frame: FeatureFrame, mode: FrameMode) -> FrameOutcome:
        started = time.perf_counter()
        pixels, levels = _pixels(frame)
        prev = self._last
        imu_batch: list[ImuSample] = []
        if prev is not None and frame.timestamp > prev.timestamp:
            try:
                imu_batch = self.imu.between(prev.timestamp, frame.timestamp)
            except ImuError:
                imu_batch = []
        if mode == FrameMode.KEYFRAME:
            outcome = self._process_keyframe(frame, pixels, levels, imu_batch)
        else:
            outcome = self._process_tracking(frame, pixels, levels, imu_batch)
        outcome.process_ms = (time.perf_counter() - started) * 1000.0
        self.counters.frames += 1
        self.counters.lost += outcome.status == FrameStatus.LOST
        self.outcomes.append(outcome)
        self._prune_imu()
        return outcome

    def _push(self, record: FrameRecord) -> None:
        self._recent.append(record)
        keep = max(self.vio.pose_window, 2)
        if len(self._recent) > keep:
            del self._recent[: len(self._recent) - keep]
        if record.state is not None and not record.lost:
            self.trajectory[record.frame_id] = (record.timestamp, record.state.pose)

    def _preintegrate(self, t_i: float, t_j: float) -> Preintegrated | None:
        try:
            return self.imu.preintegrate(t_i, t_j, self.bias)
        except ImuError:
            return None

    def _tracker_state(self, record: FrameRecord) -> TrackerState:
        return TrackerState(
            T_wc_ref=record.state.pose,
            velocity=record.state.velocity,
            bias=self.bias,
            gravity=self.gravity,
            inertial_ready=self.phase == InitPhase.INERTIAL_DONE,
        )

    def _predicted_state(self, prev: FrameRecord, imu_batch, t: float) -> tuple[NavState, Preintegrated | None]:
        pre = self._preintegrate(prev.timestamp, t) if t > prev.timestamp else None
        if self.phase == InitPhase.INERTIAL_DONE and pre is not None:
            return predict_state(prev.state.with_bias(self.bias), pre, self.gravity), pre
        pose, _, _ = predict_motion(self._tracker_state(prev), imu_batch, prev.timestamp, t)
        return NavState(pose.rotation, pose.translation, prev.state.velocity, self.bias), pre

    def _process_tracking(self, frame, pixels, levels, imu_batch) -> FrameOutcome:
        prev = self._last
        n = len(pixels)
        outcome = FrameOutcome(frame.frame_id, frame.timestamp, FrameMode.NON_KEYFRAME, FrameStatus.LOST, n)
        point_ids = np.full(n, -1, dtype=np.int64)
        mask = frame.tracked
        if prev is not None and frame.ref_frame_id == prev.frame_id and mask is not None and len(mask) == len(prev.point_ids):
            point_ids = prev.point_ids[np.asarray(mask, dtype=bool)].copy()
        elif prev is not None:
            logger.debug(f"{self.tag} Frame {frame.frame_id} does not continue frame {prev.frame_id}")

        if self.phase == InitPhase.UNINITIALIZED or prev is None or prev.state is None:
            outcome.status = FrameStatus.INITIALIZING
            self._push(FrameRecord(frame.frame_id, frame.timestamp, None, pixels, levels, point_ids))
            return outcome

        predicted, pre = self._predicted_state(prev, imu_batch, frame.timestamp)
        ref = TrackingFrame(prev.frame_id, prev.timestamp, prev.pixels, point_ids=prev.point_ids)
        cur = TrackingFrame(
            frame.frame_id,
            frame.timestamp,
            pixels,
            track_ref=np.flatnonzero(np.asarray(mask, dtype=bool)) if mask is not None else None,
        )
        try:
            result = imu_assisted_track(
                ref,
                cur,
                imu_batch,
                self.local_map.positions(),
                self._tracker_state(prev),
                self.intr,
                self.config.tracking,
                seed=frame.frame_id,
            )
        except TrackingLostError as e:
            logger.debug(f"{self.tag} Frame {frame.frame_id}: {e}")
            self._push(
                FrameRecord(
                    frame.frame_id, frame.timestamp, predicted, pixels, levels, np.full(n, -1, np.int64), pre=pre, lost=True
                )
            )
            return outcome

        for match in result.matches:
            if match.status != MatchStatus.TRACKED and match.cur_index < n:
                point_ids[match.cur_index] = -1
        T_wc = result.pose.inverse()
        state = NavState(T_wc.rotation, T_wc.translation, predicted.velocity, self.bias)
        self._push(FrameRecord(frame.frame_id, frame.timestamp, state, pixels, levels, point_ids, pre=pre))
        self._refine_window()
        outcome.status = FrameStatus.TRACKED
        outcome.inliers = result.inlier_count
        outcome.pose = self._last.state.pose
        return outcome

    def _refine_window(self) -> None:
        """Refine the newest poses over the last few frames with map points held fixed."""
        window: list[FrameRecord] = []
        for record in reversed(self._recent[-self.vio.pose_window :]):
            if record.state is None or record.lost:
                break
            window.insert(0, record)
        if len(window) < 2:
            return
        inertial = self.phase == InitPhase.INERTIAL_DONE
        dim = 15 if inertial else 6
        problem = Problem()
        kernel = RobustKernel(KernelKind.CAUCHY, self.vio.cauchy_delta)
        imu_kernel = RobustKernel(KernelKind.HUBER, self.vio.huber_delta)
        free = []
        for i, record in enumerate(window):
            fixed = i == 0 or record.keyframe
            problem.add_pose(record.frame_id, record.state, dim=dim, fixed=fixed)
            if not fixed:
                free.append(record)
        if not free:
            return
        for record in free:
            for k, pid in enumerate(record.point_ids):
                point = self.local_map.points.get(int(pid)) if pid >= 0 else None
                if point is None:
                    continue
                key = ("pt", int(pid))
                if key not in problem.points:
                    problem.add_point(key, point.position, fixed=True)
                sigma = level_sigma(self.vio.obs_sigma_px, record.levels[k], self.config.tracking.scale_ratio)
                problem.add_factor(
                    ReprojectionFactor(record.frame_id, key, record.pixels[k], self.intr, sigma, kernel)
                )
        if inertial:
            for a, b in zip(window, window[1:]):
                if b.pre is None:
                    continue
                problem.add_factor(
                    ImuFactor(
                        a.frame_id,
                        b.frame_id,
                        b.pre,
                        self.gravity,
                        imu_information(b.pre, self.noise, self.imu_weights),
                        imu_kernel,
                    )
                )
                problem.add_factor(
                    BiasWalkFactor(a.frame_id, b.frame_id, bias_walk_information(b.pre.dt_total, self.noise))
                )
        try:
            levenberg_marquardt(problem, max_iters=5, tag="PoseWindow")
        except SolverError as e:
            logger.debug(f"{self.tag} Pose window refinement skipped: {e}")
            return
        for record in free:
            record.state = problem.poses[record.frame_id]
            self.trajectory[record.frame_id] = (record.timestamp, record.state.pose)

    # -- keyframes --------------------------------------------------------

    def _process_keyframe(self, frame, pixels, levels, imu_batch) -> FrameOutcome:
        outcome = FrameOutcome(frame.frame_id, frame.timestamp, FrameMode.KEYFRAME, FrameStatus.LOST, len(pixels))
        descriptors = np.asarray(frame.descriptors, dtype=np.uint8).reshape(len(pixels), -1)
        words = np.asarray(frame.words if frame.words is not None else np.zeros(len(pixels)), dtype=np.int64)

        if self.phase == InitPhase.UNINITIALIZED:
            return self._try_initialize(frame, pixels, levels, descriptors, words, outcome)

        prev = self._last
        last_kf = self.local_map.last_keyframe
        if prev is not None and prev.state is not None:
            predicted, _ = self._predicted_state(prev, imu_batch, frame.timestamp)
        elif last_kf is not None:
            predicted = last_kf.state
        else:
            predicted = NavState.from_pose(Pose.identity())

        bow = bow_vector(words)
        located = self._locate(pixels, levels, descriptors, words, bow, predicted.pose)
        if located is None:
            logger.warning(f"{self.tag} Keyframe {frame.frame_id} lost; relocalization failed")
            self._push(
                FrameRecord(
                    frame.frame_id,
                    frame.timestamp,
                    predicted,
                    pixels,
                    levels,
                    np.full(len(pixels), -1, np.int64),
                    keyframe=True,
                    lost=True,
                )
            )
            return outcome
        T_wc, point_ids, inliers, relocalized = located

        velocity = np.zeros(3)
        pre = imu = None
        if last_kf is not None and frame.timestamp > last_kf.timestamp:
            pre = self._preintegrate(last_kf.timestamp, frame.timestamp)
            try:
                imu = self.imu.between(last_kf.timestamp, frame.timestamp)
            except ImuError:
                imu = None
            if self.phase == InitPhase.INERTIAL_DONE and pre is not None:
                velocity = predict_state(last_kf.state.with_bias(self.bias), pre, self.gravity).velocity
        kf = Keyframe(
            kf_id=frame.frame_id,
            timestamp=frame.timestamp,
            state=NavState(T_wc.rotation, T_wc.translation, velocity, self.bias),
            keypoints=pixels,
            levels=levels,
            descriptors=descriptors,
            words=words,
            point_ids=point_ids,
            bow=bow,
            prev_kf_id=last_kf.kf_id if last_kf is not None else None,
            pre=pre,
            imu=imu or [],
        )
        outcome.status = FrameStatus.RELOCALIZED if relocalized else FrameStatus.KEYFRAME
        outcome.inliers = inliers
        self._push(
            FrameRecord(
                kf.kf_id, kf.timestamp, kf.state, pixels, levels, kf.point_ids.copy(), keyframe=True, pre=pre
            )
        )
        if self.mapper is not None:
            # tracking continues on the located pose; the mapper refines it later
            outcome.pose = kf.state.pose
            self.mapper(kf)
            return outcome
        self.map_keyframe(kf)
        outcome.pose = kf.state.pose
        return outcome

    def map_keyframe(self, kf: Keyframe) -> None:
        """Local mapping for a located keyframe: triangulate, run local BA, then
        forward it to the cloud or feed inertial initialization."""
        updated = self._insert_keyframe(kf)
        record = next((r for r in reversed(self._recent) if r.frame_id == kf.kf_id), None)
        if record is not None and not record.lost:
            record.state = kf.state
            record.point_ids = kf.point_ids.copy()
            self.trajectory[kf.kf_id] = (kf.timestamp, kf.state.pose)

        if self.phase == InitPhase.VISUAL_ONLY:
            self._unsent.append(kf.kf_id)
            self._try_inertial_init()
        else:
            self._forward_keyframe(kf, updated)
            self._refresh_inertial()

    def _insert_keyframe(self, kf: Keyframe) -> list[int]:
        self.local_map.add_keyframe(kf)
        self._triangulate(kf)
        result = local_ba(
            self.local_map,
            self.intr,
            self.vio,
            self.noise,
            self.gravity,
            inertial=self.phase == InitPhase.INERTIAL_DONE,
            scale_ratio=self.config.tracking.scale_ratio,
            imu_weights=self.imu_weights,
        )
        if self.phase == InitPhase.INERTIAL_DONE:
            self.bias = kf.state.bias
        for kf_id in result.window:
            if kf_id in self.trajectory and kf_id in self.local_map.keyframes:
                k = self.local_map.keyframes[kf_id]
                self.trajectory[kf_id] = (k.timestamp, k.state.pose)
        self.local_map.trim(self.vio.max_local_keyframes)
        self.counters.keyframes += 1
        logger.debug(
            f"{self.tag} Keyframe {kf.kf_id}: {int((kf.point_ids >= 0).sum())} map points, "
            f"{len(self.local_map)} keyframes, {len(self.local_map.points)} points in the local map"
        )
        return result.updated_points

    def _pnp(self, points_w: np.ndarray, pixels: np.ndarray, seed: int) -> tuple[Pose, np.ndarray] | None:
        tracking = self.config.tracking
        try:
            inliers, ransac_pose = ransac_filter(
                points_w,
                pixels,
                self.intr,
                iterations=tracking.ransac_iterations,
                reproj_threshold=tracking.ransac_reproj_threshold,
                seed=seed,
                min_inlier_ratio=tracking.ransac_min_inlier_ratio,
            )
        except (InsufficientCorrespondencesError, NoConsensusError):
            return None
        if len(inliers) < tracking.min_tracked_inliers:
            return None
        try:
            T_cw = solve_pnp(points_w[inliers], pixels[inliers], self.intr, ransac_pose)
        except (PnPDivergenceError, InsufficientCorrespondencesError):
            T_cw = ransac_pose
        return T_cw, inliers

    def _associate(self, pixels, levels, descriptors, T_wc: Pose, radius: float) -> dict[int, int]:
        points = self.local_map.points
        if not points:
            return {}
        ids = np.fromiter(points.keys(), dtype=np.int64, count=len(points))
        positions = np.array([points[int(p)].position for p in ids])
        descs = np.array([points[int(p)].descriptor for p in ids], dtype=np.uint8)
        return match_by_projection(
            pixels,
            levels,
            descriptors,
            T_wc.inverse(),
            ids,
            positions,
            descs,
            self.intr,
            radius=radius,
            max_hamming=self.vio.match_max_hamming,
            scale_ratio=self.config.tracking.scale_ratio,
        )

    def _solve_from(self, matches: dict[int, int], pixels, seed: int):
        if not matches:
            return None
        kp_idx = np.array(sorted(matches), dtype=int)
        pids = np.array([matches[k] for k in kp_idx], dtype=np.int64)
        points_w = np.array([self.local_map.points[int(p)].position for p in pids])
        solved = self._pnp(points_w, pixels[kp_idx], seed)
        if solved is None:
            return None
        T_cw, inliers = solved
        point_ids = np.full(len(pixels), -1, dtype=np.int64)
        point_ids[kp_idx[inliers]] = pids[inliers]
        return T_cw.inverse(), point_ids, len(inliers)

    def _locate(self, pixels, levels, descriptors, words, bow, T_wc_pred: Pose):
        """(T_wc, point ids, inliers, relocalized) for a keyframe, or None when lost."""
        seed = len(self.outcomes)
        for radius in (15.0, 40.0):
            solved = self._solve_from(self._associate(pixels, levels, descriptors, T_wc_pred, radius), pixels, seed)
            if solved is not None:
                return (*solved, False)

        scored = sorted(
            ((bow_similarity(bow, kf.bow), kf.kf_id) for kf in self.local_map.keyframes.values()),
            key=lambda s: (-s[0], s[1]),
        )
        for score, kf_id in scored[: self.vio.relocalization_candidates]:
            if score <= 0.0:
                break
            kf = self.local_map.keyframes[kf_id]
            pairs = match_by_words(
                kf.words, kf.descriptors, words, descriptors, self.vio.match_max_hamming, self.vio.match_ratio
            )
            matches = {int(b): int(kf.point_ids[a]) for a, b in pairs if kf.point_ids[a] >= 0}
            solved = self._solve_from(matches, pixels, seed)
            if solved is None:
                continue
            refined = self._solve_from(self._associate(pixels, levels, descriptors, solved[0], 15.0), pixels, seed)
            T_wc, point_ids, inliers = refined or solved
            self.counters.relocalizations += 1
            logger.warning(f"{self.tag} Relocalized against keyframe {kf_id} ({inliers} inliers)")
            return T_wc, point_ids, inliers, True
        return None

    def _triangulate(self, kf: Keyframe, neighbors: int = 3) -> int:
        created = 0
        for other in reversed(self.local_map.recent(neighbors + 1)):
            if other.kf_id == kf.kf_id:
                continue
            baseline = np.linalg.norm(other.state.position - kf.state.position)
            if baseline < 1e-6:
                continue
            free_cur = np.flatnonzero(kf.point_ids < 0)
            free_other = np.flatnonzero(other.point_ids < 0)
            if len(free_cur) == 0 or len(free_other) == 0:
                break
            pairs = match_by_words(
                other.words[free_other],
                other.descriptors[free_other],
                kf.words[free_cur],
                kf.descriptors[free_cur],
                self.vio.match_max_hamming,
                self.vio.match_ratio,
            )
            if len(pairs) == 0:
                continue
            idx_other = free_other[pairs[:, 0]]
            idx_cur = free_cur[pairs[:, 1]]
            points, ok = triangulate_pairs(
                other.state.pose,
                kf.state.pose,
                other.keypoints[idx_other],
                kf.keypoints[idx_cur],
                self.intr,
                self.vio.triangulation_max_reproj,
                self.vio.triangulation_min_parallax_deg,
            )
            for i in np.flatnonzero(ok):
                point = self.local_map.new_point(points[i], kf.descriptors[idx_cur[i]])
                self.local_map.add_observation(point.point_id, other.kf_id, int(idx_other[i]))
                self.local_map.add_observation(point.point_id, kf.kf_id, int(idx_cur[i]))
                created += 1
        return created

    # -- initialization ---------------------------------------------------

    def _try_initialize(self, frame, pixels, levels, descriptors, words, outcome: FrameOutcome) -> FrameOutcome:
        outcome.status = FrameStatus.INITIALIZING
        ref = self._init_ref
        if ref is None:
            self._init_ref = _InitReference(frame.frame_id, frame.timestamp, pixels, levels, descriptors, words)
            self._push(FrameRecord(frame.frame_id, frame.timestamp, None, pixels, levels, np.full(len(pixels), -1, np.int64), keyframe=True))
            return outcome

        pairs = match_by_words(
            ref.words, ref.descriptors, words, descriptors, self.vio.match_max_hamming, self.vio.match_ratio
        )
        try:
            init = visual_init(ref.pixels[pairs[:, 0]], pixels[pairs[:, 1]], self.intr, self.vio)
        except (InsufficientParallaxError, InsufficientCorrespondencesError) as e:
            ref.attempts += 1
            logger.debug(f"{self.tag} Initialization with keyframe {ref.frame_id} failed: {e}")
            if ref.attempts >= self.vio.init_max_frames:
                self._init_ref = _InitReference(frame.frame_id, frame.timestamp, pixels, levels, descriptors, words)
            self._push(FrameRecord(frame.frame_id, frame.timestamp, None, pixels, levels, np.full(len(pixels), -1, np.int64), keyframe=True))
            return outcome

        bow_ref = bow_vector(ref.words)
        kf_a = Keyframe(
            ref.frame_id,
            ref.timestamp,
            NavState.from_pose(Pose.identity()),
            ref.pixels,
            ref.levels,
            ref.descriptors,
            ref.words,
            np.full(len(ref.pixels), -1, np.int64),
            bow_ref,
        )
        imu = []
        try:
            imu = self.imu.between(ref.timestamp, frame.timestamp)
        except ImuError:
            pass
        kf_b = Keyframe(
            frame.frame_id,
            frame.timestamp,
            NavState.from_pose(init.pose_b),
            pixels,
            levels,
            descriptors,
            words,
            np.full(len(pixels), -1, np.int64),
            bow_vector(words),
            prev_kf_id=ref.frame_id,
            pre=self._preintegrate(ref.timestamp, frame.timestamp),
            imu=imu,
        )
        self.local_map.add_keyframe(kf_a)
        self.local_map.add_keyframe(kf_b)
        for idx, position in zip(init.indices, init.points):
            a, b = int(pairs[idx, 0]), int(pairs[idx, 1])
            point = self.local_map.new_point(position, descriptors[b])
            self.local_map.add_observation(point.point_id, kf_a.kf_id, a)
            self.local_map.add_observation(point.point_id, kf_b.kf_id, b)
        self.init_state.phase = InitPhase.VISUAL_ONLY
        self.counters.keyframes += 2
        self._init_ref = None
        self._unsent = [kf_a.kf_id, kf_b.kf_id]
        self.trajectory[kf_a.kf_id] = (kf_a.timestamp, kf_a.state.pose)
        self._push(FrameRecord(kf_b.kf_id, kf_b.timestamp, kf_b.state, pixels, levels, kf_b.point_ids.copy(), keyframe=True))
        logger.info(
            f"{self.tag} Map initialized from keyframes {kf_a.kf_id} and {kf_b.kf_id} "
            f"with {len(init.indices)} points"
        )
        outcome.status = FrameStatus.KEYFRAME
        outcome.inliers = len(init.indices)
        outcome.pose = kf_b.state.pose
        return outcome

    def _inertial_chain(self) -> list[Keyframe]:
        chain: list[Keyframe] = []
        for kf in reversed(list(self.local_map.keyframes.values())):
            if chain and chain[0].prev_kf_id != kf.kf_id:
                break
            chain.insert(0, kf)
            if kf.pre is None:
                break
        return chain

    def _try_inertial_init(self) -> None:
        chain = self._inertial_chain()
        if len(chain) < self.vio.inertial_min_keyframes:
            return
        accel = np.array([s.accel for kf in chain[1:] for s in kf.imu]).reshape(-1, 3)
        try:
            result = inertial_init(
                [(kf.timestamp, kf.state.pose) for kf in chain],
                [kf.pre for kf in chain[1:]],
                accel,
                self.noise,
                self.vio,
            )
        except (InertialInitError, ExcitationTooLowError) as e:
            logger.debug(f"{self.tag} Inertial initialization deferred: {e}")
            return

        self.local_map.apply_similarity(result.scale, result.rotation, np.zeros(3))
        self.bias = result.bias
        velocities = {kf.kf_id: result.rotation @ v for kf, v in zip(chain, result.velocities)}
        for kf in self.local_map.keyframes.values():
            kf.state = NavState(kf.state.rotation, kf.state.position, velocities.get(kf.kf_id, np.zeros(3)), self.bias)
            if kf.imu:
                kf.pre = preintegrate(kf.imu, self.bias, t_end=kf.timestamp)
        self._transform_history(result.scale, result.rotation)
        self.init_state = InitState(InitPhase.INERTIAL_DONE, result.scale, result.gravity_dir)

        local_ba(
            self.local_map,
            self.intr,
            self.vio,
            self.noise,
            self.gravity,
            inertial=True,
            scale_ratio=self.config.tracking.scale_ratio,
            imu_weights=self.imu_weights,
        )
        latest = self.local_map.last_keyframe
        self.bias = latest.state.bias
        for kf in self.local_map.keyframes.values():
            if kf.kf_id in self.trajectory:
                self.trajectory[kf.kf_id] = (kf.timestamp, kf.state.pose)
        if self._last is not None and self._last.frame_id == latest.kf_id:
            self._last.state = latest.state
        logger.info(f"{self.tag} Inertial initialization done: scale {result.scale:.4f}")
        self.send_inertial_params()
        self._forward_unsent()

    def _transform_history(self, scale: float, rotation: np.ndarray) -> None:
        def move(pose: Pose) -> Pose:
            return Pose(rotation @ pose.rotation, scale * rotation @ pose.translation)

        for frame_id, (t, pose) in list(self.trajectory.items()):
            self.trajectory[frame_id] = (t, move(pose))
        for record in self._recent:
            if record.state is not None:
                p = move(record.state.pose)
                record.state = NavState(
                    p.rotation, p.translation, scale * rotation @ record.state.velocity, self.bias
                )

    def send_inertial_params(self) -> None:
        """Hand the current inertial estimate to the robot.

        Raises:
            EdgeError: inertial initialization has not succeeded yet.
        """
        if self.phase != InitPhase.INERTIAL_DONE:
            raise EdgeError("Inertial parameters requested before inertial initialization")
        latest = self.local_map.last_keyframe
        params = InertialParams(
            kf_id=latest.kf_id,
            bias=self.bias,
            gravity=self.gravity,
            scale=self.init_state.scale or 1.0,
            rotation=latest.state.rotation,
            velocity=latest.state.velocity,
        )
        self.reply(MessageType.INERTIAL_PARAMS, params.to_bytes())
        self._sent_bias = self.bias
        self._since_refresh = 0
        self.counters.inertial_params_sent += 1
        logger.info(f"{self.tag} Inertial parameters sent (keyframe {latest.kf_id})")

    def _refresh_inertial(self) -> None:
        self._since_refresh += 1
        if self._since_refresh < self.vio.inertial_refresh_keyframes or self._sent_bias is None:
            return
        self._since_refresh = 0
        sent = self._sent_bias.as_vector()
        moved = np.linalg.norm(self.bias.as_vector() - sent) / max(np.linalg.norm(sent), 1e-3)
        if moved > self.vio.bias_resend_ratio:
            logger.debug(f"{self.tag} Bias moved by {moved:.1%}; re-sending inertial parameters")
            self.send_inertial_params()

    # -- forwarding -------------------------------------------------------

    def _forward_unsent(self) -> None:
        for kf_id in self._unsent:
            kf = self.local_map.keyframes.get(kf_id)
            if kf is not None:
                self._forward_keyframe(kf, [])
        self._unsent = []

    def _forward_keyframe(self, kf: Keyframe, updated_points: list[int]) -> None:
        gids = np.array(
            [global_point_id(self.robot_id, int(p)) if p >= 0 else -1 for p in kf.point_ids], dtype=np.int64
        )
        points = {
            global_point_id(self.robot_id, int(p)): self.local_map.points[int(p)].position
            for p in kf.point_ids
            if p >= 0
        }
        record = KeyframeRecord(
            kf_id=kf.kf_id,
            timestamp=kf.timestamp,
            state=kf.state,
            keypoints=kf.keypoints,
            levels=kf.levels,
            descriptors=kf.descriptors,
            words=kf.words,
            point_ids=gids,
            points=points,
            imu=kf.imu,
        )
        self.forward(MessageType.KEYFRAME, record.to_bytes())
        self.counters.keyframes_forwarded += 1
        moved = {
            global_point_id(self.robot_id, p): self.local_map.points[p].position
            for p in updated_points
            if p in self.local_map.points
        }
        if moved:
            self.forward(MessageType.MAP_POINT_UPDATE, MapPointUpdate(moved).to_bytes())

    def _prune_imu(self) -> None:
        horizon = [r.timestamp for r in self._recent[:1]]
        last_kf = self.local_map.last_keyframe
        if last_kf is not None:
            horizon.append(last_kf.timestamp)
        if self._init_ref is not None:
            horizon.append(self._init_ref.timestamp)
        if horizon:
            self.imu.prune_before(min(horizon) - 0.1)

    # -- outputs ----------------------------------------------------------

    def trajectory_poses(self) -> list[tuple[float, Pose]]:
        """Camera poses T_wc of every tracked frame in time order."""
        return sorted(self.trajectory.values(), key=lambda e: e[0])

    def mean_drift(self) -> float:
        if not self.drift:
            return 0.0
        return float(np.mean([d[0] for d in self.drift.values()]))

    def write_diagnostics(self, path: str | Path) -> None:
        fields = ("frame_id", "timestamp", "mode", "status", "features", "inliers", "process_ms")
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(o.row() for o in self.outcomes)
