# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled range coder kernel; byte-identical twin of _range_py.

Same carry-less 32-bit byte-oriented coder, with typed C loops. The module is
optional: entropy.py falls back to the pure-Python kernel when this extension
is missing or when I2VC_PURE_PY=1.
"""

from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t
from libc.stdlib cimport malloc, free

import numpy as np

from i2vc._range_py import TruncatedPayloadError

KERNEL = "cython"

cdef uint64_t TOP = 1 << 24
cdef uint64_t BOT = 1 << 16
cdef uint64_t MASK = 0xFFFFFFFF


def encode(idx, tid, cum):
    cdef int32_t[::1] idx_v = np.ascontiguousarray(idx, dtype=np.int32)
    cdef int32_t[::1] tid_v = np.ascontiguousarray(tid, dtype=np.int32)
    cdef uint32_t[:, ::1] cum_v = np.ascontiguousarray(cum, dtype=np.uint32)
    cdef Py_ssize_t n = idx_v.shape[0]
    # renorm emits at most ~5 bytes per symbol even for floor-probability runs
    cdef Py_ssize_t cap = 6 * n + 64
    cdef uint8_t *buf = <uint8_t *> malloc(cap)
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t pos = 0
    cdef uint64_t low = 0
    cdef uint64_t rng = MASK
    cdef uint64_t c, d, r
    cdef Py_ssize_t i
    cdef int32_t k, t
    try:
        for i in range(n):
            t = tid_v[i]
            k = idx_v[i]
            c = cum_v[t, k]
            d = cum_v[t, k + 1]
            r = rng >> 16
            low += c * r
            rng = (d - c) * r
            while True:
                if (low ^ (low + rng)) < TOP:
                    buf[pos] = <uint8_t> ((low >> 24) & 0xFF)
                    pos += 1
                    low = (low << 8) & MASK
                    rng = rng << 8
                elif rng < BOT:
                    rng = (0x100000000 - low) & (BOT - 1)
                    buf[pos] = <uint8_t> ((low >> 24) & 0xFF)
                    pos += 1
                    low = (low << 8) & MASK
                    rng = rng << 8
                else:
                    break
        for i in range(4):
            buf[pos] = <uint8_t> ((low >> 24) & 0xFF)
            pos += 1
            low = (low << 8) & MASK
        return (<char *> buf)[:pos]
    finally:
        free(buf)


def decode(payload, Py_ssize_t n, tid, cum):
    cdef const uint8_t[::1] data = payload
    cdef int32_t[::1] tid_v = np.ascontiguousarray(tid, dtype=np.int32)
    cdef uint32_t[:, ::1] cum_v = np.ascontiguousarray(cum, dtype=np.uint32)
    cdef Py_ssize_t nbytes = data.shape[0]
    if nbytes < 4:
        raise TruncatedPayloadError("payload shorter than coder flush")
    out_arr = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] out = out_arr
    cdef Py_ssize_t pos = 0
    cdef uint64_t state = 0
    cdef Py_ssize_t i
    for i in range(4):
        state = (state << 8) | data[pos]
        pos += 1
    cdef uint64_t low = 0
    cdef uint64_t rng = MASK
    cdef uint64_t c, d, r, v
    cdef int32_t t
    cdef Py_ssize_t lo, hi, mid, nbins
    nbins = cum_v.shape[1] - 1
    for i in range(n):
        t = tid_v[i]
        r = rng >> 16
        v = (state - low) // r
        if v > 0xFFFF:
            v = 0xFFFF
        lo = 0
        hi = nbins
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum_v[t, mid] <= v:
                lo = mid
            else:
                hi = mid
        out[i] = <int32_t> lo
        c = cum_v[t, lo]
        d = cum_v[t, lo + 1]
        low += c * r
        rng = (d - c) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                if pos >= nbytes:
                    raise TruncatedPayloadError(f"payload exhausted at symbol {i}")
                state = ((state << 8) | data[pos]) & MASK
                pos += 1
                low = (low << 8) & MASK
                rng = rng << 8
            elif rng < BOT:
                rng = (0x100000000 - low) & (BOT - 1)
                if pos >= nbytes:
                    raise TruncatedPayloadError(f"payload exhausted at symbol {i}")
                state = ((state << 8) | data[pos]) & MASK
                pos += 1
                low = (low << 8) & MASK
                rng = rng << 8
            else:
                break
    return out_arr
