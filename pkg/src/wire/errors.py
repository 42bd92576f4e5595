class WireError(ValueError):
    """Base class for framing and link failures."""


class FrameParseError(WireError):
    """A byte stream could not be parsed; `offset` locates the offending byte."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BadMagicError(FrameParseError):
    pass


class BadVersionError(FrameParseError):
    pass


class TruncatedFrameError(FrameParseError):
    pass


class CrcMismatchError(FrameParseError):
    pass


class OversizePayloadError(WireError):
    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"Payload of {size} bytes exceeds the {limit}-byte limit")


class PayloadFormatError(WireError):
    """A message body does not match the layout of its message type."""


class SessionClosedError(WireError):
    """The session was closed or never established."""


class DeliveryAbandonedError(WireError):
    def __init__(self, msg_type: int, seq: int, retries: int):
        self.msg_type = msg_type
        self.seq = seq
        self.retries = retries
        super().__init__(f"Message type {msg_type} seq {seq} abandoned after {retries} retransmissions")


class QueueFullError(WireError):
    """The bounded send queue has no room; producers must drop or wait."""


class ReorderWindowError(WireError):
    def __init__(self, msg_type: int, seq: int, expected: int, window: int):
        self.msg_type = msg_type
        self.seq = seq
        self.expected = expected
        self.window = window
        super().__init__(
            f"Message type {msg_type} seq {seq} lies outside the reorder window [{expected}, {expected + window})"
        )
