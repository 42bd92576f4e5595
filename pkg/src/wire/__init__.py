"""Framed, acknowledged messaging between robots, edge and cloud."""

from wire.errors import (
    BadMagicError,
    BadVersionError,
    CrcMismatchError,
    DeliveryAbandonedError,
    FrameParseError,
    OversizePayloadError,
    PayloadFormatError,
    QueueFullError,
    SessionClosedError,
    TruncatedFrameError,
    WireError,
)
from wire.message import Message, MessageType, StreamParser, frame_message, parse_message
from wire.payloads import (
    Ack,
    ImuBatch,
    InertialParams,
    KeyframeRecord,
    MapPointUpdate,
    PoseCorrection,
    SessionSetup,
)
from wire.session import ReliableSession
from wire.sim_transport import SimEndpoint, SimNetwork
from wire.stats import LinkStats, SessionLog, bandwidth_report

__all__ = [
    "Ack",
    "BadMagicError",
    "BadVersionError",
    "CrcMismatchError",
    "DeliveryAbandonedError",
    "FrameParseError",
    "ImuBatch",
    "InertialParams",
    "KeyframeRecord",
    "LinkStats",
    "MapPointUpdate",
    "Message",
    "MessageType",
    "OversizePayloadError",
    "PayloadFormatError",
    "PoseCorrection",
    "QueueFullError",
    "ReliableSession",
    "SessionClosedError",
    "SessionLog",
    "SessionSetup",
    "SimEndpoint",
    "SimNetwork",
    "StreamParser",
    "TruncatedFrameError",
    "WireError",
    "bandwidth_report",
    "frame_message",
    "parse_message",
]
