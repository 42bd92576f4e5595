import copy
from pathlib import Path

import numpy as np
import pytest

from codec.vocabulary import Vocabulary
from config import AppConfig
from geometry.camera import CameraIntrinsics
from server_context import SlamContext
from wire.message import Message, MessageType

# 20-frame EuRoC-layout sequence with 160x120 PNG images
ASL_MINI = Path(__file__).parent / "fixtures" / "asl_mini"


def small_config() -> AppConfig:
    """Defaults shrunk so an end-to-end run finishes in seconds."""
    config = AppConfig()
    config.codec.vocab_size = 1024
    config.experiment.vocab_training_descriptors = 20000
    config.scenario.descriptor_prototypes = 1024
    config.scenario.landmark_count = 800
    config.scenario.duration = 12.0
    config.scenario.period = 12.0
    config.cloud.cull_keep_recent = 2
    return config


class FakeRequestContext:
    """
    A fake request context class for testing purposes.
    This class simulates the request context that would be provided by the FastMCP server.
    """

    def __init__(self, config: AppConfig):
        self.lifespan_context = SlamContext(config=config)


class FakeContext:
    """
    A fake context class for testing purposes.
    This class simulates the context that would be provided by the FastMCP server.
    """

    def __init__(self, config: AppConfig | None = None):
        self.request_context = FakeRequestContext(config or small_config())


class FakeLink:
    """In-memory stand-in for a transport endpoint; records what was sent."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.sent: list[Message] = []
        self.inbox: list[Message] = []

    def send(self, msg_type: MessageType, payload: bytes, robot_id: int) -> Message:
        msg = Message(msg_type, robot_id, len(self.sent) + 1, payload)
        self.sent.append(msg)
        return msg

    def can_send(self) -> bool:
        return self.capacity is None or len(self.sent) < self.capacity

    def receive(self) -> list[Message]:
        out, self.inbox = self.inbox, []
        return out

    def of_type(self, msg_type: MessageType) -> list[Message]:
        return [m for m in self.sent if m.msg_type == msg_type]


@pytest.fixture
def config() -> AppConfig:
    return small_config()


@pytest.fixture
def intrinsics(config) -> CameraIntrinsics:
    return CameraIntrinsics.from_config(config.camera)


@pytest.fixture(scope="module")
def vocab() -> Vocabulary:
    """Random 1024-word vocabulary matching small_config()."""
    rng = np.random.default_rng(11)
    return Vocabulary(rng.integers(0, 256, size=(1024, 32), dtype=np.uint8))


@pytest.fixture
def ctx():
    """
    Fixture to provide a Context object for testing.
    """
    return FakeContext()


@pytest.fixture
def config_factory():
    """Fresh deep copies of the small configuration."""
    base = small_config()
    return lambda: copy.deepcopy(base)
