"""Edge node: one VIO session per robot, relaying keyframes to the cloud."""

import asyncio
import logging
from collections import defaultdict, deque
from contextlib import asynccontextmanager
from typing import AsyncIterator, Protocol

from codec.errors import CodecError
from codec.vocabulary import Vocabulary
from config import AppConfig, PipelineMode
from edge.errors import EdgeError
from edge.mapping import LocalMapper
from edge.vio import VioSession
from wire.errors import QueueFullError, SessionClosedError
from wire.message import Message, MessageType
from wire.payloads import PoseCorrection, SessionSetup

logger = logging.getLogger(__name__)


class Link(Protocol):
    """What the edge needs from a transport endpoint."""

    def send(self, msg_type: MessageType, payload: bytes, robot_id: int) -> Message: ...

    def can_send(self) -> bool: ...

    def receive(self) -> list[Message]: ...


class EdgeServer:
    """Routes robot traffic into sessions and drains their outputs onto links.

    Outbound messages wait in per-link queues while the reliable session's
    window is full, so VIO never blocks on the network.
    """

    def __init__(self, config: AppConfig, vocab: Vocabulary, pipeline: PipelineMode = PipelineMode.FULL):
        self.config = config
        self.vocab = vocab
        self.pipeline = pipeline
        self.sessions: dict[int, VioSession] = {}
        self.robot_links: dict[int, Link] = {}
        self.cloud_link: Link | None = None
        self.rejected: set[int] = set()
        self._early: dict[int, list[Message]] = defaultdict(list)
        self._outbox: dict[int, deque[tuple[MessageType, bytes, int]]] = defaultdict(deque)
        self._links: dict[int, Link] = {}
        self._mappers: dict[int, LocalMapper] | None = None

    def attach_robot(self, robot_id: int, link: Link) -> None:
        self.robot_links[robot_id] = link
        self._links[id(link)] = link

    def attach_cloud(self, link: Link) -> None:
        self.cloud_link = link
        self._links[id(link)] = link

    def _enqueue(self, link: Link | None, msg_type: MessageType, payload: bytes, robot_id: int) -> None:
        if link is None:
            return
        self._outbox[id(link)].append((msg_type, payload, robot_id))

    def _session(self, robot_id: int) -> VioSession:
        session = self.sessions.get(robot_id)
        if session is None:
            session = VioSession(
                robot_id,
                self.config,
                self.vocab,
                forward=lambda t, p, r=robot_id: self._enqueue(self.cloud_link, t, p, r),
                reply=lambda t, p, r=robot_id: self._enqueue(self.robot_links.get(r), t, p, r),
                decode_only=self.pipeline == PipelineMode.STREAM,
            )
            self.sessions[robot_id] = session
            self._start_mapper(session)
        return session

    def _start_mapper(self, session: VioSession) -> None:
        if self._mappers is None or session.decode_only or session.robot_id in self._mappers:
            return
        mapper = LocalMapper(session, self.config.vio.mapping_queue)
        mapper.start()
        self._mappers[session.robot_id] = mapper

    @asynccontextmanager
    async def async_mapping(self) -> AsyncIterator[dict[int, LocalMapper]]:
        """
        Map keyframes on one asyncio task per session, for sessions present now or created later.

        Drive the edge with poll_async() inside the block. On exit every queued
        keyframe is mapped and sessions return to inline mapping; call finish()
        after the block.

        Yields:
            Mappers by robot id
        """
        self._mappers = {}
        for session in self.sessions.values():
            self._start_mapper(session)
        try:
            yield self._mappers
        finally:
            mappers, self._mappers = self._mappers, None
            for mapper in mappers.values():
                await mapper.stop()

    async def poll_async(self) -> int:
        """poll(), then yield to the mapping tasks."""
        handled = self.poll()
        await asyncio.sleep(0)
        return handled

    def on_robot_message(self, msg: Message) -> None:
        robot_id = msg.robot_id
        if robot_id in self.rejected:
            return
        session = self._session(robot_id)
        if msg.msg_type == MessageType.SESSION_SETUP:
            try:
                session.on_setup(SessionSetup.from_bytes(msg.payload))
            except CodecError as e:
                logger.error(f"[Edge] Rejecting robot {robot_id}: {e}")
                self.rejected.add(robot_id)
                return
            self._enqueue(self.cloud_link, MessageType.SESSION_SETUP, msg.payload, robot_id)
            for early in self._early.pop(robot_id, []):
                session.handle(early)
            return
        if not session.established:
            self._early[robot_id].append(msg)
            return
        session.handle(msg)

    def on_cloud_message(self, msg: Message) -> None:
        if msg.msg_type != MessageType.POSE_CORRECTION:
            logger.warning(f"[Edge] Unexpected {msg.msg_type.name} from the cloud")
            return
        session = self.sessions.get(msg.robot_id)
        if session is not None:
            session.on_pose_correction(PoseCorrection.from_bytes(msg.payload))

    def poll(self) -> int:
        """Deliver everything received so far and drain outboxes; returns messages handled."""
        handled = 0
        for robot_id, link in list(self.robot_links.items()):
            for msg in link.receive():
                try:
                    self.on_robot_message(msg)
                except (EdgeError, CodecError) as e:
                    logger.error(f"[Edge] Robot {robot_id} {msg.msg_type.name} seq {msg.seq} dropped: {e}")
                handled += 1
        if self.cloud_link is not None:
            for msg in self.cloud_link.receive():
                self.on_cloud_message(msg)
                handled += 1
        self._drain()
        return handled

    def _drain(self) -> None:
        for key, queue in self._outbox.items():
            link = self._links[key]
            while queue and link.can_send():
                msg_type, payload, robot_id = queue[0]
                try:
                    link.send(msg_type, payload, robot_id)
                except QueueFullError:
                    break
                except SessionClosedError as e:
                    logger.error(f"[Edge] Dropping {len(queue)} queued messages: {e}")
                    queue.clear()
                    break
                queue.popleft()

    @property
    def pending_outbound(self) -> int:
        return sum(len(q) for q in self._outbox.values())

    def finish(self) -> None:
        """Process buffered frames of every session and push the remaining output."""
        for robot_id, early in self._early.items():
            if early:
                logger.warning(f"[Edge] Robot {robot_id}: {len(early)} messages never saw a SessionSetup")
        for session in self.sessions.values():
            session.flush()
        self._drain()

    def summary(self) -> dict:
        return {
            robot_id: {
                "phase": s.phase.value,
                **vars(s.counters),
            }
            for robot_id, s in sorted(self.sessions.items())
        }
