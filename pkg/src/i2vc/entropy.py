"""Probability modeling and bit-exact range coding of quantized symbols.

The model is a per-position discretized Gaussian over integer bins with a
probability floor of 2^-16: bin probabilities are CDF differences, renormalized
to integer frequencies that sum to exactly 2^16 (every bin >= 1, so no symbol
can deadlock the coder). Symbols are coded as residuals against the rounded
mean, and (mean-fraction, scale) pairs are quantized onto a small grid so the
frequency tables can be shared and precomputed; the rate estimate reads the
very same tables the coder uses, which is what makes the estimate-vs-payload
bound tight.

Conditional prior: in inter mode the mean is the analysis transform applied to
the reference (as both target and condition), i.e. the code the bottleneck
would carry if the target equalled its reference, and the scale comes from a
seeded conv over the reference pyramid's bottleneck feature. In intra mode the
mean is zero with per-channel constant scales. Both are functions of
(reference, lambda, weights) only, so the decoder reproduces them exactly.

The coding kernel is selected at import: the compiled Cython module when
available, otherwise the pure-Python twin (set I2VC_PURE_PY=1 to force the
fallback; payloads are byte-identical either way).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import stvc
from ._nnops import conv2d
from ._range_py import TruncatedPayloadError  # re-exported error type

if os.environ.get("I2VC_PURE_PY") == "1":
    from . import _range_py as _kernel
else:
    try:
        from . import _range_cy as _kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _range_py as _kernel


def kernel_name() -> str:
    return _kernel.KERNEL


TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS
PROB_FLOOR = 1.0 / TOTAL
SIGMA_FLOOR = 0.25
SIGMA_MAX = 256.0
N_SIGMA_BINS = 64
DELTA_STEP = 8            # mean fraction quantized to 1/8
_RESID_MAX = 2 * stvc.ALPHABET_MAX + 1   # |symbol - rounded mean| <= 254, one margin bin
_SIGMA_GRID = np.exp(np.linspace(np.log(SIGMA_FLOOR), np.log(SIGMA_MAX), N_SIGMA_BINS))


class DistributionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Bitpayload:
    data: bytes
    bit_length: int

    @property
    def byte_length(self) -> int:
        return len(self.data)


@dataclass(frozen=True, eq=False)
class SymbolDistribution:
    """Per-symbol integer-bin PMFs, table-quantized for coding.

    mu/sigma are the continuous model parameters (flattened); offset is the
    per-position integer shift (rounded mean); table_id maps each position to
    a row of cumfreq; bin k of a row covers symbol value offset + bin_lo + k.
    """

    mu: np.ndarray
    sigma: np.ndarray
    offset: np.ndarray
    table_id: np.ndarray
    cumfreq: np.ndarray   # uint32 (n_tables, n_bins + 1), last column == TOTAL
    bin_lo: int
    shape: tuple

    @property
    def n_symbols(self) -> int:
        return self.mu.size

    @property
    def n_bins(self) -> int:
        return self.cumfreq.shape[1] - 1

    def bin_index(self, symbols: np.ndarray) -> np.ndarray:
        if symbols.shape != self.shape:
            raise DistributionError(
                f"symbols shape {symbols.shape} != distribution shape {self.shape}")
        idx = symbols.reshape(-1).astype(np.int64) - self.offset - self.bin_lo
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= self.n_bins:
            raise DistributionError("symbols outside the modeled alphabet")
        return idx.astype(np.int32)

    def pmf_rows(self) -> np.ndarray:
        """Float PMF per table row; rows sum to exactly 1 by construction."""
        freq = np.diff(self.cumfreq.astype(np.float64), axis=1)
        return freq / TOTAL

    @classmethod
    def gaussian(cls, mu: np.ndarray, sigma: np.ndarray, shape=None) -> "SymbolDistribution":
        shape = tuple(shape if shape is not None else mu.shape)
        mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), shape).reshape(-1)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), shape).reshape(-1)
        if mu.size == 0:
            return cls(mu=mu, sigma=sigma, offset=np.zeros(0, np.int64),
                       table_id=np.zeros(0, np.int32),
                       cumfreq=_uniform_tables(3), bin_lo=-1, shape=shape)
        if np.any(~np.isfinite(mu)) or np.any(~np.isfinite(sigma)):
            raise DistributionError("non-finite distribution parameters")
        sigma = np.clip(sigma, SIGMA_FLOOR, SIGMA_MAX)
        offset = np.clip(np.rint(mu), -stvc.ALPHABET_MAX, stvc.ALPHABET_MAX).astype(np.int64)
        delta_q = np.rint((mu - offset) * DELTA_STEP).astype(np.int64)  # in [-4, 4]
        sig_q = np.clip(np.searchsorted(_SIGMA_GRID, sigma), 0, N_SIGMA_BINS - 1)
        key = (delta_q + DELTA_STEP // 2 + 1) * N_SIGMA_BINS + sig_q
        uniq, table_id = np.unique(key, return_inverse=True)
        cumfreq = _cached_gaussian_tables(uniq)
        return cls(mu=mu, sigma=sigma, offset=offset,
                   table_id=table_id.astype(np.int32), cumfreq=cumfreq,
                   bin_lo=-_RESID_MAX, shape=shape)

    @classmethod
    def uniform(cls, n_levels: int, shape) -> "SymbolDistribution":
        """Uniform PMF over n_levels integer bins centered on zero."""
        shape = tuple(shape)
        n = int(np.prod(shape))
        lo = -(n_levels // 2)
        return cls(
            mu=np.zeros(n), sigma=np.full(n, np.inf), offset=np.zeros(n, np.int64),
            table_id=np.zeros(n, np.int32), cumfreq=_uniform_tables(n_levels),
            bin_lo=lo, shape=shape,
        )


def _alloc_freqs(p: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of TOTAL among bins, every bin >= 1."""
    n_rows, n_bins = p.shape
    budget = TOTAL - n_bins
    scaled = p * budget
    base = np.floor(scaled).astype(np.int64)
    rem = scaled - base
    freq = base + 1
    short = TOTAL - freq.sum(axis=1)
    # hand the leftovers to the largest remainders; stable sort keeps the
    # allocation deterministic under ties
    order = np.argsort(-rem, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(n_bins), order.shape), axis=1)
    freq += ranks < short[:, None]
    out = np.zeros((n_rows, n_bins + 1), dtype=np.uint32)
    out[:, 1:] = np.cumsum(freq, axis=1)
    assert np.all(out[:, -1] == TOTAL)
    return out


def _gaussian_tables(delta: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    bins = np.arange(-_RESID_MAX, _RESID_MAX + 1, dtype=np.float64)
    edges_hi = (bins[None, :] + 0.5 - delta[:, None]) / sigma[:, None]
    edges_lo = (bins[None, :] - 0.5 - delta[:, None]) / sigma[:, None]
    p = ndtr(edges_hi) - ndtr(edges_lo)
    p = np.maximum(p, 1e-300)
    p /= p.sum(axis=1, keepdims=True)
    return _alloc_freqs(p)


# (delta_q, sigma_bin) pairs live on a 9 x 64 grid, so rows are computed once
# per process and shared across all distributions
_TABLE_CACHE: dict = {}


def _cached_gaussian_tables(keys: np.ndarray) -> np.ndarray:
    missing = [int(k) for k in keys if int(k) not in _TABLE_CACHE]
    if missing:
        mk = np.asarray(missing, dtype=np.int64)
        delta = (mk // N_SIGMA_BINS - (DELTA_STEP // 2 + 1)) / DELTA_STEP
        sigma = _SIGMA_GRID[mk % N_SIGMA_BINS]
        rows = _gaussian_tables(delta, sigma)
        for k, row in zip(missing, rows):
            _TABLE_CACHE[k] = row
    return np.stack([_TABLE_CACHE[int(k)] for k in keys])


def _uniform_tables(n_bins: int) -> np.ndarray:
    p = np.full((1, n_bins), 1.0 / n_bins)
    return _alloc_freqs(p)


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def context_params(ref, lam, weights: stvc.StvcWeights, shape=None) -> SymbolDistribution:
    """Conditional prior over the bottleneck symbols.

    ref=None selects the intra prior (zero mean, per-channel scales); shape
    must then give the bottleneck dims. With a reference, mean and scale are
    deterministic functions of (ref, lambda, weights) that the decoder can
    replay bit-exactly.
    """
    lam = stvc.validate_lambda(lam)
    amp = stvc.gain_amplitude(lam, weights)
    c = weights.channels
    if ref is None:
        if shape is None:
            raise DistributionError("intra mode needs an explicit bottleneck shape")
        if shape[0] != c:
            raise DistributionError(f"shape has {shape[0]} channels, expected {c}")
        sigma_ch = np.clip(weights.sigma_base * amp * weights.sigma_scale_intra,
                           SIGMA_FLOOR, SIGMA_MAX)
        mu = np.zeros(shape)
        sigma = np.broadcast_to(sigma_ch[:, None, None], shape)
        return SymbolDistribution.gaussian(mu, sigma, shape)
    if ref.shape[0] != c:
        raise DistributionError(f"reference has {ref.shape[0]} channels, expected {c}")
    bn_shape = stvc.bottleneck_shape(ref.shape)
    if shape is not None and tuple(shape) != bn_shape:
        raise DistributionError(f"shape {shape} != reference bottleneck {bn_shape}")
    mu = np.clip(stvc.analysis_transform(ref, ref, lam, weights),
                 -stvc.ALPHABET_MAX, stvc.ALPHABET_MAX)
    r_bn = stvc.reference_pyramid(ref, weights)[-1]
    sigma = SIGMA_FLOOR + np.abs(conv2d(r_bn, weights.sigma_conv)) * amp * weights.sigma_scale_inter
    return SymbolDistribution.gaussian(mu, sigma, bn_shape)


# ---------------------------------------------------------------------------
# rate estimate and coding
# ---------------------------------------------------------------------------

def estimate_rate(symbols: np.ndarray, dist: SymbolDistribution) -> float:
    """Model cross-entropy in bits: sum of -log2 p(symbol)."""
    idx = dist.bin_index(symbols)
    tid = dist.table_id
    freq = (dist.cumfreq[tid, idx + 1] - dist.cumfreq[tid, idx]).astype(np.float64)
    return float(np.sum(TOTAL_BITS - np.log2(freq)))


def range_encode(symbols: np.ndarray, dist: SymbolDistribution) -> Bitpayload:
    idx = dist.bin_index(symbols)
    data = _kernel.encode(idx, dist.table_id, dist.cumfreq)
    return Bitpayload(data=data, bit_length=8 * len(data))


def range_decode(payload: Bitpayload, dist: SymbolDistribution, count: int) -> np.ndarray:
    if count != dist.n_symbols:
        raise DistributionError(
            f"count {count} != distribution size {dist.n_symbols}")
    data = payload.data if isinstance(payload, Bitpayload) else bytes(payload)
    idx = _kernel.decode(data, count, dist.table_id, dist.cumfreq)
    sym = idx.astype(np.int64) + dist.bin_lo + dist.offset
    return sym.reshape(dist.shape).astype(np.int32)
