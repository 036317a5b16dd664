"""32-bit carryless range coder over integer frequency tables (total <= 2^16)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

PRECISION = 32
TOP = 1 << (PRECISION - 8)
BOTTOM = 1 << (PRECISION - 16)
MASK = (1 << PRECISION) - 1
MAX_LITERAL_BITS = 16


class RangeEncoder:
    """Appends bytes to an internal buffer; not shareable across streams."""

    def __init__(self) -> None:
        self.low = 0
        self.range = MASK
        self._out = bytearray()
        self._finished = False

    def encode(self, start: int, freq: int, total: int) -> None:
        if freq <= 0 or total > BOTTOM or start + freq > total:
            raise ValueError(f"invalid interval start={start} freq={freq} total={total}")
        self.range //= total
        self.low += start * self.range
        self.range *= freq
        self._normalize()

    def encode_symbol(self, cdf: Sequence[int], index: int) -> None:
        start = int(cdf[index])
        self.encode(start, int(cdf[index + 1]) - start, int(cdf[-1]))

    def encode_literal(self, value: int, bits: int) -> None:
        if not 0 < bits <= MAX_LITERAL_BITS or not 0 <= value < (1 << bits):
            raise ValueError(f"literal {value} does not fit in {bits} bits")
        self.encode(value, 1, 1 << bits)

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOTTOM:
                self.range = (MASK + 1 - self.low) & (BOTTOM - 1)
            else:
                return
            self._out.append((self.low >> (PRECISION - 8)) & 0xFF)
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(PRECISION // 8):
                self._out.append((self.low >> (PRECISION - 8)) & 0xFF)
                self.low = (self.low << 8) & MASK
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Mirror of :class:`RangeEncoder`; reads past the end as zero bytes."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self.low = 0
        self.range = MASK
        self.code = 0
        for _ in range(PRECISION // 8):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos < len(self._data):
            value = self._data[self._pos]
        else:
            value = 0
        self._pos += 1
        return value

    def decode_freq(self, total: int) -> int:
        self.range //= total
        return min((self.code - self.low) // self.range, total - 1)

    def update(self, start: int, freq: int) -> None:
        self.low += start * self.range
        self.range *= freq
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOTTOM:
                self.range = (MASK + 1 - self.low) & (BOTTOM - 1)
            else:
                return
            self.code = ((self.code << 8) | self._next_byte()) & MASK
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK

    def decode_symbol(self, cdf: np.ndarray) -> int:
        target = self.decode_freq(int(cdf[-1]))
        index = int(np.searchsorted(cdf, target, side="right")) - 1
        start = int(cdf[index])
        self.update(start, int(cdf[index + 1]) - start)
        return index

    def decode_literal(self, bits: int) -> int:
        if not 0 < bits <= MAX_LITERAL_BITS:
            raise ValueError(f"literal width {bits} out of range")
        value = self.decode_freq(1 << bits)
        self.update(value, 1)
        return value

    @property
    def overrun(self) -> int:
        """Bytes consumed beyond the payload."""

        return max(0, self._pos - len(self._data))


__all__ = ["RangeDecoder", "RangeEncoder", "MAX_LITERAL_BITS"]
