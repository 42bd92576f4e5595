"""Robot-side front-end: frame-to-frame tracking and keyframe decision.

Every frame is tracked against the previously transmitted frame. Keyframes
restart the track set from fresh detections with descriptors; non-keyframes
carry only the surviving tracks, so the track count since the last keyframe
decreases monotonically and drives the mode decision directly.

Two input fidelities share this path: raster frames (pyramids + LK) and
feature-level frames whose correspondences come from scene-point identities.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from codec.costs import decide_mode
from codec.frame_codec import FeatureFrame
from config import CodecConfig, FrameMode, TrackingConfig
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from imu.preintegration import ImuBuffer, predict_state
from imu.types import ImuBias, ImuSample, NavState
from imu.errors import ImuError
from tracking.descriptor import describe_keypoints
from tracking.features import Keypoint, detect_keypoints
from tracking.flow import MatchStatus, count_status
from tracking.image import Pyramid, build_pyramid
from tracking.tracker import TrackerState, TrackingFrame, track_flow

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureObservations:
    """Feature-level stand-in for an image: what a detector would have returned.

    `track_ids` name the underlying scene point of each observation and play
    the role of optical-flow correspondences between frames.
    """

    pixels: np.ndarray
    levels: np.ndarray
    track_ids: np.ndarray
    descriptors: np.ndarray
    orientation_bins: np.ndarray

    def __len__(self) -> int:
        return len(self.pixels)


@dataclass(eq=False)
class CameraFrame:
    frame_id: int
    timestamp: float
    image: np.ndarray | None = None
    observations: FeatureObservations | None = None


@dataclass(eq=False)
class _Reference:
    timestamp: float
    keypoints: tuple[Keypoint, ...]
    pyramid: Pyramid | None
    track_ids: np.ndarray | None

    @property
    def pixels(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([[kp.u, kp.v] for kp in self.keypoints], dtype=float)


@dataclass(eq=False)
class FrontendOutput:
    """A frame ready for encoding, plus what commit() needs to advance the reference."""

    frame: FeatureFrame
    mode: FrameMode
    tracked_count: int
    used_preintegration: bool
    rejected_rotation: int = 0
    _reference: _Reference | None = field(default=None, repr=False)
    _state: TrackerState | None = field(default=None, repr=False)


class RobotFrontend:
    """Tracking state of one robot.

    process() is side-effect free; the caller commits an output once it has
    been handed to the link, so a dropped non-keyframe leaves the reference
    untouched.
    """

    def __init__(
        self,
        robot_id: int,
        intr: CameraIntrinsics,
        tracking: TrackingConfig,
        codec: CodecConfig,
        gravity: Sequence[float] = (0.0, 0.0, -9.81),
    ):
        self.robot_id = robot_id
        self.intr = intr
        self.tracking = tracking
        self.codec = codec
        self.state = TrackerState(T_wc_ref=Pose.identity(), gravity=np.asarray(gravity, dtype=float))
        self._reference: _Reference | None = None
        self._last_kf_time: float | None = None
        self._last_tx_id: int | None = None
        self.keyframes = 0
        self.frames = 0

    @property
    def inertial_ready(self) -> bool:
        return self.state.inertial_ready

    def apply_inertial_params(
        self, bias: ImuBias, gravity: np.ndarray, rotation: np.ndarray, velocity: np.ndarray
    ) -> None:
        """Switch prediction from the uniform motion model to preintegration."""
        self.state = TrackerState(
            T_wc_ref=Pose(rotation, self.state.T_wc_ref.translation),
            velocity=np.asarray(velocity, dtype=float),
            bias=bias,
            gravity=np.asarray(gravity, dtype=float),
            inertial_ready=True,
        )
        logger.info(f"[Robot {self.robot_id}] Inertial parameters received; predicting by preintegration")

    def process(self, frame: CameraFrame, imu_batch: Sequence[ImuSample], tx_id: int) -> FrontendOutput:
        """Track `frame` against the reference, decide the mode and build the record."""
        pyramid = None
        if frame.image is not None:
            pyramid = build_pyramid(frame.image, self.tracking.scale_ratio, self.tracking.num_levels)
        elif frame.observations is None:
            raise ValueError(f"Frame {frame.frame_id} carries neither an image nor observations")

        if self._reference is None:
            return self._keyframe(frame, pyramid, tx_id, tracked=0, preint=False, state=self.state)

        ref = self._reference
        ref_tf = TrackingFrame(tx_id - 1, ref.timestamp, ref.pixels, pyramid=ref.pyramid)
        if pyramid is not None:
            cur_tf = TrackingFrame(tx_id, frame.timestamp, np.zeros((0, 2)), pyramid=pyramid)
        else:
            cur_px, track_ref = self._correspond(ref, frame.observations)
            cur_tf = TrackingFrame(tx_id, frame.timestamp, cur_px, track_ref=track_ref)

        flow = track_flow(ref_tf, cur_tf, imu_batch, {}, self.state, self.intr, self.tracking)
        tracked = [m for m in flow.matches if m.status == MatchStatus.TRACKED]
        next_state = self._advance_state(imu_batch, ref.timestamp, frame.timestamp, flow.T_wc_pred)

        dt = frame.timestamp - (self._last_kf_time if self._last_kf_time is not None else frame.timestamp)
        mode = decide_mode(len(tracked), max(dt, 0.0), self.codec)
        if mode == FrameMode.KEYFRAME:
            out = self._keyframe(frame, pyramid, tx_id, len(tracked), flow.used_preintegration, next_state)
            out.rejected_rotation = count_status(flow.matches, MatchStatus.REJECTED_ROTATION)
            return out

        mask = np.zeros(len(ref.keypoints), dtype=bool)
        keypoints, track_ids = [], []
        for m in sorted(tracked, key=lambda m: m.ref_index):
            mask[m.ref_index] = True
            src = ref.keypoints[m.ref_index]
            keypoints.append(Keypoint(float(m.cur_px[0]), float(m.cur_px[1]), src.level))
            if ref.track_ids is not None:
                track_ids.append(ref.track_ids[m.ref_index])
        keypoints = [self._clamp(kp) for kp in keypoints]
        record = FeatureFrame(
            frame_id=tx_id,
            timestamp=frame.timestamp,
            keypoints=tuple(keypoints),
            ref_frame_id=self._last_tx_id,
            tracked=mask,
        )
        reference = _Reference(
            frame.timestamp,
            tuple(keypoints),
            pyramid,
            np.asarray(track_ids, dtype=np.int64) if ref.track_ids is not None else None,
        )
        return FrontendOutput(
            record,
            FrameMode.NON_KEYFRAME,
            len(tracked),
            flow.used_preintegration,
            count_status(flow.matches, MatchStatus.REJECTED_ROTATION),
            reference,
            next_state,
        )

    def commit(self, output: FrontendOutput) -> None:
        self._reference = output._reference
        if output._state is not None:
            self.state = output._state
        self._last_tx_id = output.frame.frame_id
        self.frames += 1
        if output.mode == FrameMode.KEYFRAME:
            self._last_kf_time = output.frame.timestamp
            self.keyframes += 1
        logger.debug(
            f"[Robot {self.robot_id}] Frame {output.frame.frame_id} {output.mode.value}: "
            f"{output.frame.n_features} features, {output.tracked_count} tracked"
        )

    def _clamp(self, kp: Keypoint) -> Keypoint:
        u = min(max(kp.u, 0.0), self.intr.width - 1.0)
        v = min(max(kp.v, 0.0), self.intr.height - 1.0)
        return replace(kp, u=u, v=v)

    def _correspond(self, ref: _Reference, obs: FeatureObservations) -> tuple[np.ndarray, np.ndarray]:
        """Current pixels and reference indices of reference tracks still observed."""
        if ref.track_ids is None or len(obs) == 0:
            return np.zeros((0, 2)), np.zeros(0, dtype=int)
        index = {int(t): k for k, t in enumerate(obs.track_ids)}
        ref_idx, cur_px = [], []
        for i, t in enumerate(ref.track_ids):
            k = index.get(int(t))
            if k is not None:
                ref_idx.append(i)
                cur_px.append(obs.pixels[k])
        if not ref_idx:
            return np.zeros((0, 2)), np.zeros(0, dtype=int)
        return np.asarray(cur_px, dtype=float), np.asarray(ref_idx, dtype=int)

    def _advance_state(
        self, imu_batch: Sequence[ImuSample], t_ref: float, t_cur: float, T_wc_pred: Pose
    ) -> TrackerState:
        """Dead-reckon the reference state to the current frame."""
        state = self.state
        velocity = state.velocity
        if state.inertial_ready and imu_batch and t_cur > t_ref:
            buffer = ImuBuffer()
            buffer.extend(imu_batch)
            try:
                pre = buffer.preintegrate(t_ref, t_cur, state.bias)
            except ImuError:
                pass
            else:
                nav = NavState.from_pose(state.T_wc_ref, state.velocity, state.bias)
                velocity = predict_state(nav, pre, state.gravity).velocity
        return TrackerState(T_wc_pred, velocity, state.bias, state.gravity, state.inertial_ready)

    def _keyframe(
        self,
        frame: CameraFrame,
        pyramid: Pyramid | None,
        tx_id: int,
        tracked: int,
        preint: bool,
        state: TrackerState,
    ) -> FrontendOutput:
        if pyramid is not None:
            detected = detect_keypoints(
                pyramid,
                self.tracking.target_features,
                grid_cells=self.tracking.grid_cells,
                threshold=self.tracking.fast_threshold,
            )
            keypoints, descriptors = describe_keypoints(pyramid, detected, self.codec.n_theta)
            track_ids = None
        else:
            obs = frame.observations
            keypoints = [
                self._clamp(Keypoint(float(px[0]), float(px[1]), int(level), int(theta)))
                for px, level, theta in zip(obs.pixels, obs.levels, obs.orientation_bins)
            ]
            descriptors = np.asarray(obs.descriptors, dtype=np.uint8).reshape(len(obs), -1)
            track_ids = np.asarray(obs.track_ids, dtype=np.int64)
        record = FeatureFrame(tx_id, frame.timestamp, tuple(keypoints), descriptors)
        reference = _Reference(frame.timestamp, tuple(keypoints), pyramid, track_ids)
        return FrontendOutput(record, FrameMode.KEYFRAME, tracked, preint, 0, reference, state)
