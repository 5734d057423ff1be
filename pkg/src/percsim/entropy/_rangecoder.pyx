# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled range coder kernel. Bit-exact twin of ``_pycoder``."""

from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc, realloc

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF PRECISION = 16
DEF TOTAL = 65536
DEF HALF = 32768
DEF TOP = 16777216


cdef struct Enc:
    uint64_t low
    uint32_t range
    uint32_t cache
    uint64_t cache_size
    uint8_t *buf
    Py_ssize_t n
    Py_ssize_t cap


cdef int _put(Enc *e, uint8_t b) except -1 nogil:
    cdef uint8_t *nb
    if e.n == e.cap:
        e.cap = e.cap * 2 + 64
        nb = <uint8_t *> realloc(e.buf, e.cap)
        if nb == NULL:
            with gil:
                raise MemoryError()
        e.buf = nb
    e.buf[e.n] = b
    e.n += 1
    return 0


cdef int _shift_low(Enc *e) except -1 nogil:
    cdef uint32_t carry, temp
    if e.low < 0xFF000000ULL or e.low > 0xFFFFFFFFULL:
        carry = <uint32_t> (e.low >> 32)
        temp = e.cache
        while True:
            _put(e, <uint8_t> ((temp + carry) & 0xFF))
            temp = 0xFF
            e.cache_size -= 1
            if e.cache_size == 0:
                break
        e.cache = <uint32_t> ((e.low >> 24) & 0xFF)
    e.cache_size += 1
    e.low = (e.low << 8) & 0xFFFFFFFFULL
    return 0


cdef inline int _encode(Enc *e, uint32_t start, uint32_t freq) except -1 nogil:
    cdef uint32_t r = e.range >> PRECISION
    e.low += <uint64_t> r * start
    e.range = r * freq
    while e.range < TOP:
        e.range <<= 8
        _shift_low(e)
    return 0


cdef struct Dec:
    uint32_t code
    uint32_t range
    const uint8_t *data
    Py_ssize_t n
    Py_ssize_t pos


cdef inline uint32_t _next(Dec *d) noexcept nogil:
    cdef uint32_t b = 0
    if d.pos < d.n:
        b = d.data[d.pos]
    d.pos += 1
    return b


cdef inline void _dec_normalize(Dec *d) noexcept nogil:
    while d.range < TOP:
        d.code = (d.code << 8) | _next(d)
        d.range <<= 8


cdef inline int _dec_bit(Dec *d) noexcept nogil:
    cdef uint32_t r = d.range >> PRECISION
    cdef uint32_t v = d.code // r
    cdef int b = 1 if v >= HALF else 0
    if b:
        d.code -= r * HALF
    d.range = r * HALF
    _dec_normalize(d)
    return b


def encode_indexed(symbols, indexes, cdfs, cdf_sizes, offsets):
    cdef cnp.int32_t[::1] sym = np.ascontiguousarray(symbols, dtype=np.int32).ravel()
    cdef cnp.int32_t[::1] idx = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    cdef cnp.int32_t[:, ::1] cdf = np.ascontiguousarray(cdfs, dtype=np.int32)
    cdef cnp.int32_t[::1] sizes = np.ascontiguousarray(cdf_sizes, dtype=np.int32)
    cdef cnp.int32_t[::1] offs = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef Py_ssize_t i, n = sym.shape[0]
    cdef int t, size, max_value, esc, nbits, k
    cdef int64_t v, u
    cdef uint64_t m
    cdef Enc e
    if idx.shape[0] != n:
        raise ValueError("symbols and indexes differ in length")
    if n == 0:
        return b""
    e.low = 0
    e.range = 0xFFFFFFFF
    e.cache = 0
    e.cache_size = 1
    e.n = 0
    e.cap = n // 2 + 64
    e.buf = <uint8_t *> malloc(e.cap)
    if e.buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                t = idx[i]
                size = sizes[t]
                max_value = size - 3
                v = <int64_t> sym[i] - offs[t]
                if 0 <= v <= max_value:
                    _encode(&e, cdf[t, v], cdf[t, v + 1] - cdf[t, v])
                    continue
                esc = size - 2
                _encode(&e, cdf[t, esc], cdf[t, esc + 1] - cdf[t, esc])
                if v < 0:
                    u = -2 * v - 1
                else:
                    u = 2 * (v - max_value - 1)
                m = <uint64_t> (u + 1)
                nbits = 0
                while (m >> nbits) != 0:
                    nbits += 1
                for k in range(nbits - 1):
                    _encode(&e, 0, HALF)
                for k in range(nbits - 1, -1, -1):
                    if (m >> k) & 1:
                        _encode(&e, HALF, HALF)
                    else:
                        _encode(&e, 0, HALF)
            for k in range(5):
                _shift_low(&e)
        return bytes(e.buf[1:e.n])
    finally:
        free(e.buf)


def decode_indexed(data, indexes, cdfs, cdf_sizes, offsets):
    cdef bytes buf = bytes(data)
    cdef cnp.int32_t[::1] idx = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    cdef cnp.int32_t[:, ::1] cdf = np.ascontiguousarray(cdfs, dtype=np.int32)
    cdef cnp.int32_t[::1] sizes = np.ascontiguousarray(cdf_sizes, dtype=np.int32)
    cdef cnp.int32_t[::1] offs = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef Py_ssize_t i, n = idx.shape[0]
    out_arr = np.empty(n, dtype=np.int32)
    cdef cnp.int32_t[::1] out = out_arr
    cdef int t, size, lo, hi, mid, s, zeros, k, bad = 0
    cdef uint32_t r, v, start
    cdef int64_t val
    cdef uint64_t m
    cdef Dec d
    if n == 0:
        return out_arr
    d.data = buf
    d.n = len(buf)
    d.pos = 0
    d.range = 0xFFFFFFFF
    d.code = 0
    for k in range(4):
        d.code = (d.code << 8) | _next(&d)
    with nogil:
        for i in range(n):
            t = idx[i]
            size = sizes[t]
            r = d.range >> PRECISION
            v = d.code // r
            if v >= TOTAL:
                v = TOTAL - 1
            lo = 0
            hi = size - 1
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if <uint32_t> cdf[t, mid] <= v:
                    lo = mid
                else:
                    hi = mid
            s = lo
            start = cdf[t, s]
            d.code -= r * start
            d.range = r * (cdf[t, s + 1] - start)
            _dec_normalize(&d)
            if s == size - 2:
                zeros = 0
                while _dec_bit(&d) == 0:
                    zeros += 1
                    if zeros > 40:
                        bad = 1
                        break
                if bad:
                    break
                m = 1
                for k in range(zeros):
                    m = (m << 1) | <uint64_t> _dec_bit(&d)
                m -= 1
                if m & 1:
                    val = -<int64_t> ((m + 1) >> 1)
                else:
                    val = <int64_t> (m >> 1) + (size - 3) + 1
            else:
                val = s
            out[i] = <cnp.int32_t> (val + offs[t])
    if bad:
        raise ValueError("malformed escape code")
    return out_arr
