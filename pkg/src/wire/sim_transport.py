"""Deterministic in-process transport on a virtual clock.

Every message is framed to bytes on send and parsed on arrival, so the
simulated path exercises the same codec as the socket path. Loss,
duplication, latency and jitter are drawn from a seeded generator per
channel direction; jitter larger than the inter-send gap reorders frames.
"""

import heapq
import itertools
import logging

import numpy as np

from config import LinkConfig
from wire.message import Message, MessageType, frame_message, parse_message
from wire.session import ReliableSession
from wire.stats import SessionLog

logger = logging.getLogger(__name__)


class SimChannel:
    """One direction of a simulated link."""

    def __init__(self, cfg: LinkConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.dropped = 0
        self.duplicated = 0

    def arrivals(self, now: float) -> list[float]:
        """Arrival times of one transmitted frame (empty when dropped)."""
        if self.cfg.drop_rate > 0 and self.rng.random() < self.cfg.drop_rate:
            self.dropped += 1
            return []
        times = [now + self.cfg.latency + self.rng.uniform(0.0, self.cfg.jitter)]
        if self.cfg.duplicate_rate > 0 and self.rng.random() < self.cfg.duplicate_rate:
            self.duplicated += 1
            times.append(now + self.cfg.latency + self.rng.uniform(0.0, self.cfg.jitter))
        return times


class SimEndpoint:
    """Application-facing end of a simulated link."""

    def __init__(self, network: "SimNetwork", session: ReliableSession, channel: SimChannel):
        self.network = network
        self.session = session
        self.channel = channel
        self.peer: SimEndpoint | None = None
        self._inbox: list[Message] = []

    @property
    def name(self) -> str:
        return self.session.name

    def send(self, msg_type: MessageType, payload: bytes, robot_id: int) -> Message:
        return self.session.send(msg_type, payload, robot_id, now=self.network.now)

    def can_send(self) -> bool:
        return self.session.can_send()

    def receive(self) -> list[Message]:
        """Delivered messages since the previous call, in arrival order."""
        out, self._inbox = self._inbox, []
        return out

    def close(self) -> None:
        self.session.close()


class SimNetwork:
    """Virtual-time event loop carrying frames between endpoints."""

    def __init__(self, cfg: LinkConfig, log: SessionLog | None = None):
        self.cfg = cfg
        self.log = log
        self.now = 0.0
        self.endpoints: list[SimEndpoint] = []
        self._events: list[tuple[float, int, SimEndpoint, bytes]] = []
        self._counter = itertools.count()
        self._seeds = itertools.count(cfg.seed)

    def connect(self, name_a: str, name_b: str) -> tuple[SimEndpoint, SimEndpoint]:
        a = SimEndpoint(self, ReliableSession(self.cfg, name_a, self.log), SimChannel(self.cfg, next(self._seeds)))
        b = SimEndpoint(self, ReliableSession(self.cfg, name_b, self.log), SimChannel(self.cfg, next(self._seeds)))
        a.peer, b.peer = b, a
        self.endpoints.extend((a, b))
        logger.debug(f"[Link] Connected {name_a} <-> {name_b}")
        return a, b

    def _flush(self) -> None:
        for ep in self.endpoints:
            for msg in ep.session.poll(self.now):
                data = frame_message(msg, self.cfg.max_payload)
                for t in ep.channel.arrivals(self.now):
                    heapq.heappush(self._events, (t, next(self._counter), ep.peer, data))

    def _next_time(self) -> float | None:
        times = [self._events[0][0]] if self._events else []
        for ep in self.endpoints:
            deadline = ep.session.next_deadline()
            if deadline is not None:
                times.append(max(deadline, self.now))
        return min(times) if times else None

    def run_until(self, t: float) -> None:
        """Advance the clock to `t`, delivering frames and firing retransmissions on the way.

        Raises:
            DeliveryAbandonedError: from any session that gave up on a message.
        """
        self._flush()
        while True:
            next_t = self._next_time()
            if next_t is None or next_t > t:
                break
            self.now = max(self.now, next_t)
            while self._events and self._events[0][0] <= self.now:
                _, _, ep, data = heapq.heappop(self._events)
                if ep.session.closed:
                    continue
                msg = parse_message(data, self.cfg.max_payload)
                ep._inbox.extend(ep.session.on_receive(msg, self.now))
            self._flush()
        self.now = max(self.now, t)

    def idle(self) -> bool:
        return not self._events and all(ep.session.idle or ep.session.closed for ep in self.endpoints)

    def settle(self, timeout: float) -> bool:
        """Run until nothing is in flight or `timeout` virtual seconds pass; True when idle."""
        end = self.now + timeout
        while not self.idle():
            next_t = self._next_time()
            if next_t is None or next_t > end:
                break
            self.run_until(next_t)
        return self.idle()

    def close(self) -> None:
        for ep in self.endpoints:
            ep.close()
