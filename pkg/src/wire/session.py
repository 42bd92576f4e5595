"""Sans-IO reliable session.

The session never touches a socket. Transports feed it received messages
and a clock; it hands back messages to put on the wire and messages to
deliver to the application. Streams are keyed by (robot_id, msg_type);
sequence numbers start at 1 and are acknowledged cumulatively with
KEYFRAME_ACK messages, which are themselves unsequenced (seq 0) and never
acknowledged.
"""

import logging
from dataclasses import dataclass

from config import LinkConfig
from wire.errors import (
    DeliveryAbandonedError,
    PayloadFormatError,
    QueueFullError,
    ReorderWindowError,
    SessionClosedError,
)
from wire.message import Message, MessageType
from wire.payloads import Ack
from wire.stats import LinkStats, SessionLog

logger = logging.getLogger(__name__)

StreamKey = tuple[int, MessageType]


@dataclass(eq=False)
class PendingMessage:
    msg: Message
    attempts: int = 0
    due: float = 0.0
    timeout: float = 0.0

    def __repr__(self):
        return f"<PendingMessage({self.msg.msg_type.name}, seq={self.msg.seq}, attempts={self.attempts})>"


class _ReceiveStream:
    """Reorder buffer for one inbound stream.

    Only sequence numbers in [expected, expected + window) are buffered. A
    sender holds at most `window` unacknowledged messages, so anything past
    that edge is dropped unacknowledged and arrives again by retransmission.
    """

    def __init__(self, window: int):
        self.expected = 1
        self.window = window
        self.buffered: dict[int, Message] = {}

    def accept(self, msg: Message) -> tuple[list[Message], bool]:
        """In-order messages now deliverable, and whether `msg` was a duplicate.

        Raises:
            ReorderWindowError: `msg` lies beyond the reorder window.
        """
        if msg.seq < self.expected or msg.seq in self.buffered:
            return [], True
        if msg.seq >= self.expected + self.window:
            raise ReorderWindowError(msg.msg_type, msg.seq, self.expected, self.window)
        self.buffered[msg.seq] = msg
        ready = []
        while self.expected in self.buffered:
            ready.append(self.buffered.pop(self.expected))
            self.expected += 1
        return ready, False

    @property
    def cumulative(self) -> int:
        return self.expected - 1


class ReliableSession:
    """One end of a link.

    send() queues a message, poll() returns what must go on the wire now
    (first transmissions, retransmissions and pending acks), and
    on_receive() returns the messages the application should see, exactly
    once and in per-stream order.
    """

    def __init__(self, cfg: LinkConfig, name: str = "Link", log: SessionLog | None = None):
        self.cfg = cfg
        self.name = name
        self.stats = LinkStats()
        self.rx_stats = LinkStats()
        self.log = log
        self.closed = False
        self.established = False
        self._next_seq: dict[StreamKey, int] = {}
        self._pending: dict[tuple[StreamKey, int], PendingMessage] = {}
        self._receive: dict[StreamKey, _ReceiveStream] = {}
        self._acks: dict[StreamKey, Message] = {}

    @property
    def queued(self) -> int:
        return len(self._pending)

    @property
    def idle(self) -> bool:
        """Nothing awaiting acknowledgment and no ack left to send."""
        return not self._pending and not self._acks

    def can_send(self) -> bool:
        return not self.closed and len(self._pending) < self.cfg.max_queue

    def send(self, msg_type: MessageType, payload: bytes, robot_id: int, now: float = 0.0) -> Message:
        """Queue one message for reliable delivery; it goes out on the next poll().

        Raises:
            SessionClosedError: the session is closed, or data is sent before SessionSetup.
            QueueFullError: max_queue messages are awaiting acknowledgment.
        """
        if self.closed:
            raise SessionClosedError(f"[{self.name}] Session is closed")
        if msg_type == MessageType.KEYFRAME_ACK:
            raise ValueError("Acks are generated by the session")
        if msg_type == MessageType.SESSION_SETUP:
            self.established = True
        elif not self.established:
            raise SessionClosedError(f"[{self.name}] {msg_type.name} sent before session setup")
        if len(self._pending) >= self.cfg.max_queue:
            raise QueueFullError(f"[{self.name}] {len(self._pending)} messages awaiting acknowledgment")
        key = (robot_id, msg_type)
        seq = self._next_seq.get(key, 1)
        self._next_seq[key] = seq + 1
        msg = Message(msg_type, robot_id, seq, payload)
        self._pending[(key, seq)] = PendingMessage(msg, due=now)
        return msg

    def poll(self, now: float) -> list[Message]:
        """Messages to transmit at time `now`.

        Raises:
            DeliveryAbandonedError: a message exhausted max_retries; the session closes.
        """
        out = list(self._acks.values())
        self._acks.clear()
        for ack in out:
            self.stats.record_sent(now, ack)
            if self.log:
                self.log.record(now, "tx", ack)
        if self.closed:
            return out
        for pending in sorted(self._pending.values(), key=lambda p: p.due):
            if pending.due > now:
                continue
            if pending.attempts > self.cfg.max_retries:
                self.close()
                msg = pending.msg
                logger.warning(
                    f"[{self.name}] Abandoned {msg.msg_type.name} seq {msg.seq} after {self.cfg.max_retries} retries"
                )
                raise DeliveryAbandonedError(msg.msg_type, msg.seq, self.cfg.max_retries)
            retx = pending.attempts > 0
            pending.timeout = min(self.cfg.ack_timeout * self.cfg.backoff**pending.attempts, self.cfg.max_timeout)
            pending.attempts += 1
            pending.due = now + pending.timeout
            self.stats.record_sent(now, pending.msg, retransmission=retx)
            if self.log:
                self.log.record(now, "tx", pending.msg, pending.attempts - 1)
            if retx:
                logger.debug(
                    f"[{self.name}] Retransmit {pending.msg.msg_type.name} seq {pending.msg.seq} "
                    f"(attempt {pending.attempts}, next timeout {pending.timeout:.2f}s)"
                )
            out.append(pending.msg)
        return out

    def next_deadline(self) -> float | None:
        """Earliest time poll() has work, or None when nothing is pending."""
        if self._acks:
            return 0.0
        if not self._pending or self.closed:
            return None
        return min(p.due for p in self._pending.values())

    def on_receive(self, msg: Message, now: float = 0.0) -> list[Message]:
        """Process one inbound message; returns the messages to deliver."""
        if self.log:
            self.log.record(now, "rx", msg)
        self.rx_stats.record_sent(now, msg)
        if msg.msg_type == MessageType.KEYFRAME_ACK:
            self._on_ack(msg)
            return []
        key = (msg.robot_id, msg.msg_type)
        stream = self._receive.get(key)
        if stream is None:
            stream = self._receive[key] = _ReceiveStream(self.cfg.max_queue)
        try:
            ready, duplicate = stream.accept(msg)
        except ReorderWindowError as e:
            self.rx_stats.record_overflow()
            logger.warning(f"[{self.name}] Dropped: {e}")
            return []
        self.rx_stats.record_delivered(duplicate=duplicate)
        if duplicate:
            logger.debug(f"[{self.name}] Duplicate {msg.msg_type.name} seq {msg.seq} dropped")
        if any(m.msg_type == MessageType.SESSION_SETUP for m in ready):
            self.established = True
        if stream.cumulative:
            ack = Ack(int(msg.msg_type), stream.cumulative)
            self._acks[key] = Message(MessageType.KEYFRAME_ACK, msg.robot_id, 0, ack.to_bytes())
        return ready

    def _on_ack(self, msg: Message) -> None:
        try:
            ack = Ack.from_bytes(msg.payload)
            key = (msg.robot_id, MessageType(ack.acked_type))
        except (PayloadFormatError, ValueError) as e:
            logger.warning(f"[{self.name}] Ignoring malformed ack: {e}")
            return
        done = [k for k in self._pending if k[0] == key and k[1] <= ack.seq]
        for k in done:
            self.stats.record_acked(self._pending.pop(k).msg.wire_size)

    def close(self) -> None:
        if not self.closed:
            logger.info(f"[{self.name}] Session closed with {len(self._pending)} unacknowledged messages")
        self.closed = True
