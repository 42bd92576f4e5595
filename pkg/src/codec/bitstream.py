"""MSB-first bit packing with fixed-width fields and LEB128-style varints."""

import struct

from codec.errors import CorruptPayloadError


class BitWriter:
    def __init__(self):
        self._bits: list[int] = []

    def __len__(self) -> int:
        return len(self._bits)

    def write_bit(self, bit: int) -> None:
        self._bits.append(1 if bit else 0)

    def write_bits(self, value: int, width: int) -> None:
        if width == 0:
            return
        if value < 0 or value >> width:
            raise ValueError(f"Value {value} does not fit in {width} bits")
        self._bits.extend((value >> shift) & 1 for shift in range(width - 1, -1, -1))

    def write_varint(self, value: int) -> None:
        """Groups of 7 bits, least significant first, each prefixed by a continuation bit."""
        if value < 0:
            raise ValueError("varint must be >= 0")
        while True:
            chunk = value & 0x7F
            value >>= 7
            self.write_bit(1 if value else 0)
            self.write_bits(chunk, 7)
            if not value:
                break

    def write_f64(self, value: float) -> None:
        self.write_bits(int.from_bytes(struct.pack(">d", value), "big"), 64)

    def extend(self, bits) -> None:
        self._bits.extend(1 if b else 0 for b in bits)

    def bits(self) -> list[int]:
        return list(self._bits)

    def to_bytes(self) -> bytes:
        """Pack, zero-padding the last byte."""
        out = bytearray((len(self._bits) + 7) // 8)
        for i, bit in enumerate(self._bits):
            if bit:
                out[i >> 3] |= 0x80 >> (i & 7)
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes, bit_length: int | None = None):
        self._data = data
        self._limit = len(data) * 8 if bit_length is None else bit_length
        if self._limit > len(data) * 8:
            raise CorruptPayloadError(f"Bit length {self._limit} exceeds {len(data)} bytes")
        self.position = 0

    @property
    def remaining(self) -> int:
        return self._limit - self.position

    def read_bit(self) -> int:
        if self.position >= self._limit:
            raise CorruptPayloadError(f"Read past end of bitstream at bit {self.position}")
        bit = (self._data[self.position >> 3] >> (7 - (self.position & 7))) & 1
        self.position += 1
        return bit

    def read_bits(self, width: int) -> int:
        value = 0
        for _ in range(width):
            value = (value << 1) | self.read_bit()
        return value

    def read_varint(self) -> int:
        value, shift = 0, 0
        while True:
            more = self.read_bit()
            value |= self.read_bits(7) << shift
            shift += 7
            if not more:
                return value
            if shift > 63:
                raise CorruptPayloadError("varint longer than 64 bits")

    def read_f64(self) -> float:
        return struct.unpack(">d", self.read_bits(64).to_bytes(8, "big"))[0]

    def read_padded_bit(self) -> int:
        """Next bit, or 0 once the stream is exhausted."""
        if self.position >= self._limit:
            self.position += 1
            return 0
        return self.read_bit()
