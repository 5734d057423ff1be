"""Pure-Python range coder; the reference the compiled kernel must match byte for byte.

Carry-propagating 32-bit range coder (LZMA-style cache/carry handling) with
byte-wise renormalization and 16-bit cumulative frequency tables. Each symbol
is coded against the table selected by its index; values outside a table's
support are coded as the table's escape symbol followed by an Elias-gamma
code sent through equiprobable binary decisions.
"""

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_HALF = TOTAL >> 1


class _Encoder:
    __slots__ = ("low", "range", "cache", "cache_size", "out")

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & _MASK32

    def encode(self, start, freq):
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def bit(self, b):
        self.encode(_HALF if b else 0, _HALF)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        # the leading byte is always the initial zero cache
        return bytes(self.out[1:])


class _Decoder:
    __slots__ = ("code", "range", "data", "pos")

    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self):
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def decode(self, cdf, size):
        r = self.range >> PRECISION
        v = self.code // r
        if v >= TOTAL:
            v = TOTAL - 1
        # binary search for the last s with cdf[s] <= v, s < size - 1
        lo, hi = 0, size - 1
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf[mid] <= v:
                lo = mid
            else:
                hi = mid
        s = lo
        start = cdf[s]
        self.code -= r * start
        self.range = r * (cdf[s + 1] - start)
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8
        return s

    def bit(self):
        r = self.range >> PRECISION
        v = self.code // r
        b = 1 if v >= _HALF else 0
        self.code -= r * (_HALF if b else 0)
        self.range = r * _HALF
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8
        return b


def _escape_value(v, max_value):
    # map an out-of-support value to a nonnegative integer
    if v < 0:
        return -2 * v - 1
    return 2 * (v - max_value - 1)


def _unescape_value(u, max_value):
    if u & 1:
        return -((u + 1) >> 1)
    return (u >> 1) + max_value + 1


def encode_indexed(symbols, indexes, cdfs, cdf_sizes, offsets):
    symbols = np.ascontiguousarray(symbols, dtype=np.int32).ravel()
    indexes = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    if symbols.size != indexes.size:
        raise ValueError("symbols and indexes differ in length")
    if symbols.size == 0:
        return b""
    cdf_rows = [row.tolist() for row in np.asarray(cdfs, dtype=np.int32)]
    sizes = np.asarray(cdf_sizes, dtype=np.int32).tolist()
    offs = np.asarray(offsets, dtype=np.int32).tolist()
    enc = _Encoder()
    for sym, idx in zip(symbols.tolist(), indexes.tolist()):
        cdf = cdf_rows[idx]
        size = sizes[idx]
        max_value = size - 3
        v = sym - offs[idx]
        if 0 <= v <= max_value:
            enc.encode(cdf[v], cdf[v + 1] - cdf[v])
            continue
        esc = size - 2
        enc.encode(cdf[esc], cdf[esc + 1] - cdf[esc])
        n = _escape_value(v, max_value) + 1
        nbits = n.bit_length()
        for _ in range(nbits - 1):
            enc.bit(0)
        for k in range(nbits - 1, -1, -1):
            enc.bit((n >> k) & 1)
    return enc.finish()


def decode_indexed(data, indexes, cdfs, cdf_sizes, offsets):
    indexes = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    out = np.empty(indexes.size, dtype=np.int32)
    if indexes.size == 0:
        return out
    cdf_rows = [row.tolist() for row in np.asarray(cdfs, dtype=np.int32)]
    sizes = np.asarray(cdf_sizes, dtype=np.int32).tolist()
    offs = np.asarray(offsets, dtype=np.int32).tolist()
    dec = _Decoder(bytes(data))
    for i, idx in enumerate(indexes.tolist()):
        size = sizes[idx]
        max_value = size - 3
        v = dec.decode(cdf_rows[idx], size)
        if v == size - 2:
            zeros = 0
            while dec.bit() == 0:
                zeros += 1
                if zeros > 40:
                    raise ValueError("malformed escape code")
            n = 1
            for _ in range(zeros):
                n = (n << 1) | dec.bit()
            v = _unescape_value(n - 1, max_value)
        out[i] = v + offs[idx]
    return out
