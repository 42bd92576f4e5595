class CodecError(ValueError):
    """Base class for feature codec failures."""


class MissingDescriptorError(CodecError):
    """A keyframe is missing descriptors for some of its keypoints."""


class CorruptPayloadError(CodecError):
    """The payload length or arithmetic-coder state does not match the header."""


class ConfigMismatchError(CodecError):
    def __init__(self, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"Codec fingerprint mismatch: expected {expected:08x}, found {found:08x}")


class InsufficientDataError(CodecError):
    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(f"{available} training descriptors, at least {required} required")


class VocabularyFormatError(CodecError):
    """A vocabulary file has a bad magic, version, size or checksum."""
