"""Robot agent: front-end tracking, p0 calibration, encoding and transmission."""

import logging
from collections import deque
from dataclasses import replace
from typing import Sequence

import numpy as np

from codec.costs import CostLog, estimate_p0
from codec.errors import MissingDescriptorError
from codec.frame_codec import encode_frame
from codec.geometry import PyramidGeometry
from codec.vocabulary import Vocabulary
from config import AppConfig, CodecConfig, FrameMode
from edge.server import Link
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from imu.errors import ImuError
from imu.preintegration import ImuBuffer
from imu.types import ImuSample
from tracking.frontend import CameraFrame, FrontendOutput, RobotFrontend
from wire.errors import QueueFullError
from wire.message import MessageType
from wire.payloads import ImuBatch, InertialParams, SessionSetup

logger = logging.getLogger(__name__)


class RobotAgent:
    """Replays one robot's sensor streams over a link.

    Frames are tracked as soon as their time comes. Until `calibration_keyframes`
    keyframes have been seen the outputs are held back: p0 is measured on their
    descriptors, SessionSetup goes out first, and the held frames follow.
    """

    def __init__(
        self,
        robot_id: int,
        config: AppConfig,
        vocab: Vocabulary,
        frames: Sequence[CameraFrame],
        imu: Sequence[ImuSample],
        link: Link | None = None,
    ):
        self.robot_id = robot_id
        self.config = config
        self.vocab = vocab
        self.frames = frames
        self.imu = list(imu)
        self.link = link
        self.intr = CameraIntrinsics.from_config(config.camera)
        self.geom = PyramidGeometry.from_config(config.codec)
        self.frontend = RobotFrontend(robot_id, self.intr, config.tracking, config.codec, config.imu.gravity)
        self.codec: CodecConfig | None = None
        self.costs = CostLog()
        self.tag = f"[Robot {robot_id}]"

        self._buffer = ImuBuffer()
        self._imu_index = 0
        self._frame_index = 0
        self._prev_time: float | None = None
        self._held: list[FrontendOutput] = []
        self._outbox: deque[tuple[MessageType, bytes]] = deque()
        self._rotations: dict[int, np.ndarray] = {}
        self.inertial_updates = 0

    @property
    def done(self) -> bool:
        return self._frame_index >= len(self.frames) and self.codec is not None and not self._outbox

    @property
    def next_time(self) -> float | None:
        if self._frame_index >= len(self.frames):
            return None
        return self.frames[self._frame_index].timestamp

    # -- sensing ----------------------------------------------------------

    def _take_imu(self, until: float) -> list[ImuSample]:
        start = self._imu_index
        while self._imu_index < len(self.imu) and self.imu[self._imu_index].timestamp <= until:
            self._imu_index += 1
        return self.imu[start : self._imu_index]

    def step(self, now: float) -> int:
        """Track, encode and queue every frame captured up to `now`; returns frames processed."""
        processed = 0
        lookahead = 1.0 / self.config.imu.rate
        while self._frame_index < len(self.frames) and self.frames[self._frame_index].timestamp <= now:
            frame = self.frames[self._frame_index]
            fresh = self._take_imu(frame.timestamp + lookahead)
            if fresh:
                self._buffer.extend(fresh)
                self._outbox.append((MessageType.IMU_BATCH, ImuBatch(fresh).to_bytes()))
            self._process(frame)
            self._frame_index += 1
            processed += 1
        self._drain()
        return processed

    def _process(self, frame: CameraFrame) -> None:
        batch: list[ImuSample] = []
        if self._prev_time is not None and frame.timestamp > self._prev_time:
            try:
                batch = self._buffer.between(self._prev_time, frame.timestamp)
            except ImuError as e:
                logger.debug(f"{self.tag} No IMU for frame {frame.frame_id}: {e}")
        tx_id = self._frame_index
        output = self.frontend.process(frame, batch, tx_id)
        self.frontend.commit(output)
        self._rotations[tx_id] = self.frontend.state.T_wc_ref.rotation
        self._prev_time = frame.timestamp
        self._buffer.prune_before(frame.timestamp - 1.0)

        if self.codec is None:
            self._held.append(output)
            held_kfs = sum(o.mode == FrameMode.KEYFRAME for o in self._held)
            if held_kfs >= self.config.codec.calibration_keyframes:
                self.calibrate()
        else:
            self._queue_frame(output)

    def _queue_frame(self, output: FrontendOutput) -> None:
        mode = output.mode
        enc = encode_frame(output.frame, mode, self.vocab, self.geom, self.codec)
        self.costs.add(enc.cost_report)
        msg_type = MessageType.KEYFRAME if mode == FrameMode.KEYFRAME else MessageType.NON_KEYFRAME
        self._outbox.append((msg_type, enc.payload))

    def calibrate(self) -> float:
        """Measure p0 on the held keyframes, queue SessionSetup ahead of everything, release frames."""
        descriptors = [
            o.frame.descriptors for o in self._held if o.mode == FrameMode.KEYFRAME and o.frame.descriptors is not None
        ]
        try:
            p0 = estimate_p0(np.vstack(descriptors) if descriptors else None, self.vocab)
        except MissingDescriptorError:
            p0 = self.config.codec.p0_kf
            logger.warning(f"{self.tag} No keyframe descriptors to calibrate from; using p0 {p0:.3f}")
        self.codec = replace(self.config.codec, p0_kf=p0)
        setup = SessionSetup(self.codec.fingerprint(self.vocab.fingerprint), p0, self.vocab.fingerprint)
        self._outbox.appendleft((MessageType.SESSION_SETUP, setup.to_bytes()))
        for output in self._held:
            self._queue_frame(output)
        logger.info(f"{self.tag} Calibrated p0 {p0:.4f} on {len(descriptors)} keyframes; releasing {len(self._held)} frames")
        self._held = []
        return p0

    def finish(self) -> None:
        """Send the remaining IMU tail and make sure the session is set up."""
        tail = self._take_imu(float("inf"))
        if tail:
            self._outbox.append((MessageType.IMU_BATCH, ImuBatch(tail).to_bytes()))
        if self.codec is None:
            self.calibrate()
        self._drain()

    # -- link -------------------------------------------------------------

    def _drain(self) -> None:
        if self.link is None or self.codec is None:
            return
        while self._outbox and self.link.can_send():
            msg_type, payload = self._outbox[0]
            try:
                self.link.send(msg_type, payload, self.robot_id)
            except QueueFullError:
                break
            self._outbox.popleft()

    def poll(self) -> int:
        """Handle what the edge sent back and push queued output; returns messages handled."""
        handled = 0
        if self.link is not None:
            for msg in self.link.receive():
                handled += 1
                if msg.msg_type == MessageType.INERTIAL_PARAMS:
                    self.on_inertial_params(InertialParams.from_bytes(msg.payload))
                else:
                    logger.warning(f"{self.tag} Ignoring unexpected {msg.msg_type.name}")
        self._drain()
        return handled

    def on_inertial_params(self, params: InertialParams) -> None:
        """Adopt the edge's bias and gravity; rotations are re-expressed in the edge frame.

        The parameters describe keyframe `kf_id`; the robot's own rotation at that
        frame gives the alignment applied to its current reference rotation.
        """
        current = self.frontend.state.T_wc_ref.rotation
        own = self._rotations.get(params.kf_id)
        if own is not None:
            align = params.rotation @ own.T
            rotation = align @ current
        else:
            rotation = params.rotation
        self.frontend.apply_inertial_params(params.bias, params.gravity, rotation, params.velocity)
        self.inertial_updates += 1

    @property
    def pending(self) -> int:
        return len(self._outbox) + len(self._held)

    def reference_pose(self) -> Pose:
        return self.frontend.state.T_wc_ref
