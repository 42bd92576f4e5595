"""Static-probability binary arithmetic coder (32-bit integer range coder).

P(bit == 0) is a 16-bit fixed-point value shared by both ends. The encoder
terminates with the usual two disambiguating bits (plus pending underflow
bits); the decoder treats bits past the end of its segment as zeros.
"""

from codec.bitstream import BitReader

_PRECISION = 32
_TOP = (1 << _PRECISION) - 1
_HALF = 1 << (_PRECISION - 1)
_QUARTER = 1 << (_PRECISION - 2)
_PROB_BITS = 16


def _split(low: int, high: int, p0: int) -> int:
    return low + (((high - low + 1) * p0) >> _PROB_BITS) - 1


class BinaryArithmeticEncoder:
    def __init__(self, p0: int):
        if not 0 < p0 < (1 << _PROB_BITS):
            raise ValueError(f"p0 must be in (0, {1 << _PROB_BITS}), got {p0}")
        self.p0 = p0
        self._low = 0
        self._high = _TOP
        self._pending = 0
        self._out: list[int] = []
        self._finished = False

    def _emit(self, bit: int) -> None:
        self._out.append(bit)
        self._out.extend([1 - bit] * self._pending)
        self._pending = 0

    def encode(self, bit: int) -> None:
        split = _split(self._low, self._high, self.p0)
        if bit:
            self._low = split + 1
        else:
            self._high = split
        while True:
            if self._high < _HALF:
                self._emit(0)
            elif self._low >= _HALF:
                self._emit(1)
                self._low -= _HALF
                self._high -= _HALF
            elif self._low >= _QUARTER and self._high < _HALF + _QUARTER:
                self._pending += 1
                self._low -= _QUARTER
                self._high -= _QUARTER
            else:
                break
            self._low = self._low << 1
            self._high = (self._high << 1) | 1

    def encode_all(self, bits) -> None:
        for bit in bits:
            self.encode(bit)

    def finish(self) -> list[int]:
        if not self._finished:
            self._pending += 1
            self._emit(0 if self._low < _QUARTER else 1)
            self._finished = True
        return self._out


class BinaryArithmeticDecoder:
    def __init__(self, reader: BitReader, p0: int):
        self.p0 = p0
        self._reader = reader
        self._low = 0
        self._high = _TOP
        self._value = 0
        for _ in range(_PRECISION):
            self._value = (self._value << 1) | reader.read_padded_bit()

    def decode(self) -> int:
        split = _split(self._low, self._high, self.p0)
        if self._value <= split:
            bit = 0
            self._high = split
        else:
            bit = 1
            self._low = split + 1
        while True:
            if self._high < _HALF:
                pass
            elif self._low >= _HALF:
                self._low -= _HALF
                self._high -= _HALF
                self._value -= _HALF
            elif self._low >= _QUARTER and self._high < _HALF + _QUARTER:
                self._low -= _QUARTER
                self._high -= _QUARTER
                self._value -= _QUARTER
            else:
                break
            self._low = self._low << 1
            self._high = (self._high << 1) | 1
            self._value = (self._value << 1) | self._reader.read_padded_bit()
        return bit

    def decode_many(self, count: int) -> list[int]:
        return [self.decode() for _ in range(count)]
