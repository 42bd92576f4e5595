"""Stream-socket transport on asyncio.

`TcpLink` drives a ReliableSession over one connection. The session is
shared with application threads under a lock, so `send`/`receive` may be
called from outside the event loop. `TcpNetwork` runs a private event loop
in a background thread and offers the same connect/run_until/settle
surface as the simulated network.
"""

import asyncio
import logging
import threading
import time
from collections import deque
from typing import Awaitable, Callable

from config import LinkConfig
from wire.errors import DeliveryAbandonedError, FrameParseError
from wire.message import Message, MessageType, StreamParser, frame_message
from wire.session import ReliableSession
from wire.stats import SessionLog

logger = logging.getLogger(__name__)

_READ_CHUNK = 65536
_MAX_WAIT = 0.05


class TcpLink:
    def __init__(
        self,
        session: ReliableSession,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        loop: asyncio.AbstractEventLoop,
    ):
        self.session = session
        self.reader = reader
        self.writer = writer
        self.loop = loop
        self.parser = StreamParser(session.cfg.max_payload)
        self.error: Exception | None = None
        self._lock = threading.Lock()
        self._inbox: deque[Message] = deque()
        self._wake = asyncio.Event()
        self._tasks: list[asyncio.Task] = []
        self._clock = time.monotonic
        self._t0 = self._clock()

    @property
    def name(self) -> str:
        return self.session.name

    def now(self) -> float:
        return self._clock() - self._t0

    def start(self) -> None:
        self._tasks = [
            self.loop.create_task(self._read_loop()),
            self.loop.create_task(self._write_loop()),
        ]

    def send(self, msg_type: MessageType, payload: bytes, robot_id: int) -> Message:
        with self._lock:
            msg = self.session.send(msg_type, payload, robot_id, now=self.now())
        self.loop.call_soon_threadsafe(self._wake.set)
        return msg

    def can_send(self) -> bool:
        with self._lock:
            return self.error is None and self.session.can_send()

    def receive(self) -> list[Message]:
        out = []
        while self._inbox:
            out.append(self._inbox.popleft())
        return out

    @property
    def idle(self) -> bool:
        with self._lock:
            return self.session.idle or self.session.closed

    async def _read_loop(self) -> None:
        try:
            while True:
                chunk = await self.reader.read(_READ_CHUNK)
                if not chunk:
                    self.parser.close()
                    break
                for msg in self.parser.feed(chunk):
                    with self._lock:
                        delivered = self.session.on_receive(msg, self.now())
                    self._inbox.extend(delivered)
                self._wake.set()
        except FrameParseError as e:
            logger.error(f"[{self.name}] Stream corrupt: {e}")
            self.error = e
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.warning(f"[{self.name}] Connection lost: {e}")
            self.error = e
        finally:
            with self._lock:
                self.session.close()
            self._wake.set()

    async def _write_loop(self) -> None:
        try:
            while True:
                with self._lock:
                    out = self.session.poll(self.now())
                    deadline = self.session.next_deadline()
                    closed = self.session.closed
                for msg in out:
                    self.writer.write(frame_message(msg, self.session.cfg.max_payload))
                if out:
                    await self.writer.drain()
                if closed:
                    break
                wait = _MAX_WAIT if deadline is None else min(max(deadline - self.now(), 0.0), _MAX_WAIT)
                self._wake.clear()
                try:
                    await asyncio.wait_for(self._wake.wait(), timeout=wait)
                except TimeoutError:
                    pass
        except DeliveryAbandonedError as e:
            self.error = e
        except ConnectionError as e:
            logger.warning(f"[{self.name}] Connection lost: {e}")
            self.error = e
            with self._lock:
                self.session.close()

    async def aclose(self) -> None:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        with self._lock:
            self.session.close()
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except ConnectionError:
            pass


async def open_link(host: str, port: int, cfg: LinkConfig, name: str, log: SessionLog | None = None) -> TcpLink:
    """Client side: connect and start driving a new session."""
    reader, writer = await asyncio.open_connection(host, port)
    link = TcpLink(ReliableSession(cfg, name, log), reader, writer, asyncio.get_running_loop())
    link.start()
    logger.info(f"[{name}] Connected to {host}:{port}")
    return link


async def serve_links(
    host: str,
    port: int,
    cfg: LinkConfig,
    name: str,
    on_link: Callable[[TcpLink], Awaitable[None] | None],
    log: SessionLog | None = None,
) -> asyncio.Server:
    """Server side: every accepted connection gets its own session and is handed to `on_link`."""

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        link = TcpLink(ReliableSession(cfg, f"{name} {peer}", log), reader, writer, asyncio.get_running_loop())
        link.start()
        logger.info(f"[{name}] Accepted connection from {peer}")
        result = on_link(link)
        if asyncio.iscoroutine(result):
            await result

    return await asyncio.start_server(handle, host, port)


class TcpNetwork:
    """Loopback TCP links on a background event loop, with the simulated network's surface.

    Time is wall-clock; run_until() only waits for traffic in flight to be
    acknowledged, so experiments run as fast as the sockets allow.
    """

    def __init__(self, cfg: LinkConfig, log: SessionLog | None = None, host: str = "127.0.0.1"):
        self.cfg = cfg
        self.log = log
        self.host = host
        self.now = 0.0
        self.links: list[TcpLink] = []
        self._servers: list[asyncio.Server] = []
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, name="edgeslam-tcp", daemon=True)
        self._thread.start()

    def _run(self, coro, timeout: float = 10.0):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    async def _connect(self, name_a: str, name_b: str) -> tuple[TcpLink, TcpLink]:
        accepted: asyncio.Future[TcpLink] = self.loop.create_future()

        def on_link(link: TcpLink) -> None:
            link.session.name = name_b
            if not accepted.done():
                accepted.set_result(link)

        server = await serve_links(self.host, 0, self.cfg, name_b, on_link, self.log)
        self._servers.append(server)
        port = server.sockets[0].getsockname()[1]
        client = await open_link(self.host, port, self.cfg, name_a, self.log)
        return client, await accepted

    def connect(self, name_a: str, name_b: str) -> tuple[TcpLink, TcpLink]:
        a, b = self._run(self._connect(name_a, name_b))
        self.links.extend((a, b))
        return a, b

    def _raise_errors(self) -> None:
        for link in self.links:
            if isinstance(link.error, DeliveryAbandonedError):
                raise link.error

    def idle(self) -> bool:
        return all(link.idle for link in self.links)

    def settle(self, timeout: float) -> bool:
        end = time.monotonic() + timeout
        while not self.idle() and time.monotonic() < end:
            time.sleep(0.001)
        self._raise_errors()
        return self.idle()

    def run_until(self, t: float) -> None:
        self.settle(self.cfg.max_timeout)
        self.now = max(self.now, t)

    def close(self) -> None:
        async def shutdown() -> None:
            for link in self.links:
                await link.aclose()
            for server in self._servers:
                server.close()
                await server.wait_closed()

        try:
            self._run(shutdown())
        finally:
            self.loop.call_soon_threadsafe(self.loop.stop)
            self._thread.join(timeout=5.0)
