"""Deterministic random streams (splitmix64 + Box-Muller).

All seeded weights and per-frame noise in the codec come from here rather than
from numpy's RNG, so generated parameters and golden bitstreams do not depend
on the installed numpy version. Streams are keyed by (seed, tags...) and are
pure functions of the key.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _splitmix(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the whole point; numpy warns on scalar overflow
    with np.errstate(over="ignore"):
        z = (z + _GOLDEN).astype(np.uint64)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def mix(seed: int, *tags: int) -> int:
    """Derive a child seed from a parent seed and integer tags."""
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for t in tags:
        z = _splitmix(np.uint64((int(z) ^ (t & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF))
    return int(_splitmix(z))


def raw_u64(seed: int, n: int) -> np.ndarray:
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    ctr = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _splitmix(base * _MIX1 + ctr * _GOLDEN)


def uniforms(seed: int, shape) -> np.ndarray:
    """iid uniforms in [0, 1), float64."""
    n = int(np.prod(shape)) if np.ndim(shape) or isinstance(shape, (tuple, list)) else int(shape)
    u = (raw_u64(seed, n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)
    return u.reshape(shape)


def normals(seed: int, shape) -> np.ndarray:
    """iid standard normals via Box-Muller, float64."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = uniforms(mix(seed, 0x1), m)
    u2 = uniforms(mix(seed, 0x2), m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    ang = 2.0 * np.pi * u2
    out = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
    return out.reshape(shape)


def orthogonal(seed: int, n: int) -> np.ndarray:
    """Seed-deterministic n x n orthogonal matrix (Householder QR, sign-fixed).

    Implemented in plain numpy ops (no LAPACK) so the matrix is reproducible
    independent of the BLAS build.
    """
    a = normals(seed, (n, n))
    q = np.eye(n)
    r = a.copy()
    for k in range(n):
        x = r[k:, k]
        nx = np.sqrt(np.dot(x, x))
        if nx == 0.0:
            continue
        v = x.copy()
        v[0] += nx if x[0] >= 0 else -nx
        nv = np.sqrt(np.dot(v, v))
        if nv == 0.0:
            continue
        v /= nv
        r[k:, :] -= 2.0 * np.outer(v, v @ r[k:, :])
        q[:, k:] -= 2.0 * np.outer(q[:, k:] @ v, v)
    # make diag(R) positive so the decomposition (hence Q) is unique
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d[np.newaxis, :]
