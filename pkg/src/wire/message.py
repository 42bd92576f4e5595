"""Message envelope and its byte framing.

Frame layout, little-endian:

    magic u32 (0x45534C4D) | version u8 | msg_type u8 | robot_id u16 | seq u32 |
    payload_len u32 | payload | crc32 u32

The CRC (IEEE) covers everything after the magic up to the end of the payload.
"""

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

from wire.errors import (
    BadMagicError,
    BadVersionError,
    CrcMismatchError,
    FrameParseError,
    OversizePayloadError,
    TruncatedFrameError,
)

MAGIC = 0x45534C4D
VERSION = 1
DEFAULT_MAX_PAYLOAD = 1 << 20
HEADER = struct.Struct("<IBBHII")
TRAILER = struct.Struct("<I")
OVERHEAD = HEADER.size + TRAILER.size


class MessageType(IntEnum):
    SESSION_SETUP = 1
    NON_KEYFRAME = 2
    KEYFRAME = 3
    IMU_BATCH = 4
    MAP_POINT_UPDATE = 5
    KEYFRAME_ACK = 6
    INERTIAL_PARAMS = 7
    POSE_CORRECTION = 8


@dataclass(frozen=True)
class Message:
    msg_type: MessageType
    robot_id: int
    seq: int
    payload: bytes = b""

    @property
    def wire_size(self) -> int:
        return OVERHEAD + len(self.payload)


def frame_message(msg: Message, max_payload: int = DEFAULT_MAX_PAYLOAD) -> bytes:
    """Serialize one message.

    Raises:
        OversizePayloadError: payload longer than max_payload.
    """
    if len(msg.payload) > max_payload:
        raise OversizePayloadError(len(msg.payload), max_payload)
    header = HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.robot_id, msg.seq, len(msg.payload))
    crc = zlib.crc32(header[4:])
    crc = zlib.crc32(msg.payload, crc) & 0xFFFFFFFF
    return header + msg.payload + TRAILER.pack(crc)


def _parse_at(data: bytes | bytearray, start: int, base: int, max_payload: int) -> tuple[Message, int] | None:
    """Message at data[start:] and the offset just past it; None when more bytes are needed.

    `base` is added to reported offsets so stream errors locate the byte in the stream.
    """
    available = len(data) - start
    if available >= 4:
        (magic,) = struct.unpack_from("<I", data, start)
        if magic != MAGIC:
            raise BadMagicError(f"Bad magic 0x{magic:08x}", base + start)
    if available < HEADER.size:
        return None
    _, version, msg_type, robot_id, seq, length = HEADER.unpack_from(data, start)
    if version != VERSION:
        raise BadVersionError(f"Unsupported version {version}", base + start + 4)
    if length > max_payload:
        raise FrameParseError(f"Declared payload of {length} bytes exceeds {max_payload}", base + start + 12)
    end = start + HEADER.size + length + TRAILER.size
    if len(data) < end:
        return None
    body_end = end - TRAILER.size
    (crc,) = TRAILER.unpack_from(data, body_end)
    expected = zlib.crc32(bytes(data[start + 4 : body_end])) & 0xFFFFFFFF
    if crc != expected:
        raise CrcMismatchError(f"CRC 0x{crc:08x} != 0x{expected:08x}", base + body_end)
    try:
        kind = MessageType(msg_type)
    except ValueError:
        raise FrameParseError(f"Unknown message type {msg_type}", base + start + 5) from None
    payload = bytes(data[start + HEADER.size : body_end])
    return Message(kind, robot_id, seq, payload), end


def parse_message(data: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Message:
    """Parse exactly one frame.

    Raises:
        BadMagicError, BadVersionError, CrcMismatchError: invalid frame.
        TruncatedFrameError: fewer bytes than the header declares.
        FrameParseError: unknown message type or trailing bytes.
    """
    parsed = _parse_at(data, 0, 0, max_payload)
    if parsed is None:
        raise TruncatedFrameError(f"Frame truncated after {len(data)} bytes", len(data))
    msg, end = parsed
    if end != len(data):
        raise FrameParseError(f"{len(data) - end} trailing bytes after frame", end)
    return msg


class StreamParser:
    """Incremental parser for a byte stream carrying back-to-back frames.

    Any split of the stream into chunks yields the same messages.
    """

    def __init__(self, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.max_payload = max_payload
        self._buffer = bytearray()
        self._consumed = 0

    @property
    def pending_bytes(self) -> int:
        return len(self._buffer)

    def feed(self, chunk: bytes) -> list[Message]:
        self._buffer.extend(chunk)
        messages = []
        pos = 0
        while True:
            parsed = _parse_at(self._buffer, pos, self._consumed, self.max_payload)
            if parsed is None:
                break
            msg, pos = parsed
            messages.append(msg)
        if pos:
            del self._buffer[:pos]
            self._consumed += pos
        return messages

    def close(self) -> None:
        """Signal end of stream.

        Raises:
            TruncatedFrameError: a partial frame is left in the buffer.
        """
        if self._buffer:
            raise TruncatedFrameError(
                f"Stream ended inside a frame ({len(self._buffer)} bytes pending)",
                self._consumed + len(self._buffer),
            )
