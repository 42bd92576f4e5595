"""Local mapping as an asyncio task.

Tracking hands each located keyframe to a bounded queue and returns; the
task drains the queue on the same event loop, so tracking and mapping
interleave between frames and the local map keeps a single writer.
"""

import asyncio
import logging
from contextlib import suppress

from edge.errors import EdgeError
from edge.local_map import Keyframe
from edge.vio import VioSession
from optim.errors import SolverError

logger = logging.getLogger(__name__)


class LocalMapper:
    """Runs `VioSession.map_keyframe` for queued keyframes in arrival order."""

    def __init__(self, session: VioSession, maxsize: int):
        self.session = session
        self.queue: asyncio.Queue[Keyframe] = asyncio.Queue(maxsize)
        self.mapped = 0
        self.inline = 0
        self._task: asyncio.Task | None = None

    @property
    def running(self) -> bool:
        return self._task is not None and not self._task.done()

    def start(self) -> None:
        """Attach to the session and start the task; needs a running event loop."""
        self.session.mapper = self.submit
        self._task = asyncio.get_running_loop().create_task(self.run(), name=f"mapping-{self.session.robot_id}")
        logger.info(f"{self.session.tag} Mapping task started")

    def submit(self, kf: Keyframe) -> None:
        """Queue a keyframe; a full queue maps the oldest one inline first."""
        if self.queue.full():
            oldest = self.queue.get_nowait()
            try:
                self._map(oldest)
            finally:
                self.queue.task_done()
            self.inline += 1
            logger.debug(f"{self.session.tag} Mapping queue full; mapped keyframe {oldest.kf_id} inline")
        self.queue.put_nowait(kf)

    def _map(self, kf: Keyframe) -> None:
        try:
            self.session.map_keyframe(kf)
        except (EdgeError, SolverError) as e:
            logger.error(f"{self.session.tag} Mapping keyframe {kf.kf_id} failed: {e}")
        self.mapped += 1

    async def run(self) -> None:
        while True:
            kf = await self.queue.get()
            try:
                self._map(kf)
            finally:
                self.queue.task_done()
            await asyncio.sleep(0)

    async def stop(self) -> None:
        """Map whatever is still queued, stop the task and detach from the session.

        Re-raises an exception that ended the task.
        """
        try:
            if self._task is not None:
                joined = asyncio.ensure_future(self.queue.join())
                await asyncio.wait({joined, self._task}, return_when=asyncio.FIRST_COMPLETED)
                joined.cancel()
                self._task.cancel()
                with suppress(asyncio.CancelledError):
                    await self._task
        finally:
            self.session.mapper = None
            self._task = None
        logger.info(f"{self.session.tag} Mapping task stopped after {self.mapped} keyframes ({self.inline} inline)")
