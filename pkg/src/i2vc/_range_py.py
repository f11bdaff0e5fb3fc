"""Pure-Python range coder kernel (fallback when the compiled one is absent).

Carry-less byte-oriented 32-bit renormalizing range coder ("Russian" variant):
the invariant low + range <= 2^32 - 1 makes carries impossible, at the cost of
a negligible range waste in the underflow branch. Frequency tables are integer
cumulative rows with total exactly 2^16, so the per-symbol range division is a
shift.

Payload layout: each renormalization emits the most significant byte of the
coder state, in stream order; encoding ends with an explicit four-byte flush
of the remaining state. An empty symbol stream therefore codes to exactly the
four flush bytes. Both kernels (this and the Cython twin) must produce
byte-identical payloads; tests enforce it.
"""

from __future__ import annotations

import numpy as np

KERNEL = "python"

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF


class TruncatedPayloadError(ValueError):
    """Payload ended before all requested symbols were decoded."""


def encode(idx: np.ndarray, tid: np.ndarray, cum: np.ndarray) -> bytes:
    """Encode bin indices `idx`, symbol i using cumulative-frequency row tid[i]."""
    out = bytearray()
    emit = out.append
    low = 0
    rng = _MASK
    cum_l = [row.tolist() for row in cum]  # python ints: no uint32 overflow traps
    for i in range(len(idx)):
        row = cum_l[tid[i]]
        k = idx[i]
        c = row[k]
        d = row[k + 1]
        r = rng >> 16
        low += c * r
        rng = (d - c) * r
        while True:
            if (low ^ (low + rng)) < _TOP:
                emit((low >> 24) & 0xFF)
                low = (low << 8) & _MASK
                rng = rng << 8
            elif rng < _BOT:
                rng = (0x100000000 - low) & (_BOT - 1)
                emit((low >> 24) & 0xFF)
                low = (low << 8) & _MASK
                rng = rng << 8
            else:
                break
    for _ in range(4):
        emit((low >> 24) & 0xFF)
        low = (low << 8) & _MASK
    return bytes(out)


def decode(payload: bytes, n: int, tid: np.ndarray, cum: np.ndarray) -> np.ndarray:
    """Recover n bin indices; raises TruncatedPayloadError on short payloads."""
    nbytes = len(payload)
    if nbytes < 4:
        raise TruncatedPayloadError("payload shorter than coder flush")
    pos = 0
    state = 0
    for _ in range(4):
        state = (state << 8) | payload[pos]
        pos += 1
    low = 0
    rng = _MASK
    out = np.empty(n, dtype=np.int32)
    cum_l = [row.tolist() for row in cum]
    for i in range(n):
        row = cum_l[tid[i]]
        r = rng >> 16
        v = (state - low) // r
        if v > 0xFFFF:
            v = 0xFFFF
        # find k with row[k] <= v < row[k+1]
        lo, hi = 0, len(row) - 1
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if row[mid] <= v:
                lo = mid
            else:
                hi = mid
        k = lo
        out[i] = k
        c = row[k]
        d = row[k + 1]
        low += c * r
        rng = (d - c) * r
        while True:
            if (low ^ (low + rng)) < _TOP:
                if pos >= nbytes:
                    raise TruncatedPayloadError(f"payload exhausted at symbol {i}")
                state = ((state << 8) | payload[pos]) & _MASK
                pos += 1
                low = (low << 8) & _MASK
                rng = rng << 8
            elif rng < _BOT:
                rng = (0x100000000 - low) & (_BOT - 1)
                if pos >= nbytes:
                    raise TruncatedPayloadError(f"payload exhausted at symbol {i}")
                state = ((state << 8) | payload[pos]) & _MASK
                pos += 1
                low = (low << 8) & _MASK
                rng = rng << 8
            else:
                break
    return out
