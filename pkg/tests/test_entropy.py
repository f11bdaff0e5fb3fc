import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from i2vc import _detrand, entropy, stvc

DATA = os.path.join(os.path.dirname(__file__), "data")


def rand_symbols(seed, n, spread=5.0):
    raw = _detrand.normals(seed, n) * spread
    return np.clip(np.rint(raw), -127, 127).astype(np.int32)


def gauss_dist(seed, n):
    mu = _detrand.normals(_detrand.mix(seed, 1), n) * 2.0
    sigma = 0.3 + np.abs(_detrand.normals(_detrand.mix(seed, 2), n)) * 6.0
    return entropy.SymbolDistribution.gaussian(mu, sigma, (n,))


# ---------------------------------------------------------------------------
# distribution validity
# ---------------------------------------------------------------------------

def test_pmf_rows_sum_to_one_with_floor():
    d = gauss_dist(0, 500)
    pmf = d.pmf_rows()
    assert np.all(np.abs(pmf.sum(axis=1) - 1.0) < 1e-9)
    assert pmf.min() >= 1.0 / entropy.TOTAL - 1e-15


def test_sigma_clamped_to_floor():
    d = entropy.SymbolDistribution.gaussian(np.zeros(4), np.full(4, 1e-9), (4,))
    assert np.all(d.sigma >= entropy.SIGMA_FLOOR)


def test_uniform_distribution_exact():
    d = entropy.SymbolDistribution.uniform(256, (10,))
    pmf = d.pmf_rows()
    assert pmf.shape == (1, 256)
    assert np.all(pmf == 1.0 / 256)


def test_alphabet_violation_rejected():
    d = gauss_dist(1, 8)
    bad = np.full(8, 400, dtype=np.int32)
    with pytest.raises(entropy.DistributionError):
        d.bin_index(bad)


# ---------------------------------------------------------------------------
# rate estimation
# ---------------------------------------------------------------------------

def test_uniform_256_is_exactly_8_bits_per_symbol():
    n = 321
    d = entropy.SymbolDistribution.uniform(256, (n,))
    sym = rand_symbols(3, n)
    assert entropy.estimate_rate(sym, d) == pytest.approx(8.0 * n, abs=1e-9)


def test_peaked_distribution_near_zero_bits():
    n = 50
    d = entropy.SymbolDistribution.gaussian(np.zeros(n), np.full(n, entropy.SIGMA_FLOOR), (n,))
    sym = np.zeros(n, dtype=np.int32)
    bits = entropy.estimate_rate(sym, d)
    # bounded below by the probability floor's mass drain, far under 1 bit/symbol
    assert 0.0 < bits < 0.1 * n


def test_estimate_matches_payload_within_bound():
    for seed in range(8):
        n = int(16 + (_detrand.raw_u64(seed, 1)[0] % 4000))
        d = gauss_dist(seed, n)
        sym = rand_symbols(seed + 50, n)
        est = entropy.estimate_rate(sym, d)
        actual = entropy.range_encode(sym, d).bit_length
        assert actual <= est * 1.01 + 64
        assert est <= actual + 64


# ---------------------------------------------------------------------------
# range coding
# ---------------------------------------------------------------------------

def test_empty_tensor_flush_only():
    d = entropy.SymbolDistribution.gaussian(np.zeros(0), np.ones(0), (0,))
    payload = entropy.range_encode(np.zeros(0, dtype=np.int32), d)
    assert payload.byte_length == 4  # coder flush only
    back = entropy.range_decode(payload, d, 0)
    assert back.size == 0


def test_round_trip_exact():
    for seed in range(20):
        n = int(1 + (_detrand.raw_u64(seed, 1)[0] % 3000))
        d = gauss_dist(seed, n)
        sym = rand_symbols(seed + 99, n, spread=20.0)
        payload = entropy.range_encode(sym, d)
        back = entropy.range_decode(payload, d, n)
        assert np.array_equal(back, sym)


def test_determinism_byte_identical():
    d = gauss_dist(5, 777)
    sym = rand_symbols(6, 777)
    a = entropy.range_encode(sym, d)
    b = entropy.range_encode(sym, d)
    assert a.data == b.data
    assert a.bit_length == 8 * a.byte_length


def test_truncated_payload_raises():
    d = gauss_dist(2, 600)
    sym = rand_symbols(3, 600, spread=30.0)
    payload = entropy.range_encode(sym, d)
    clipped = entropy.Bitpayload(payload.data[: payload.byte_length // 2],
                                 8 * (payload.byte_length // 2))
    with pytest.raises(entropy.TruncatedPayloadError):
        entropy.range_decode(clipped, d, 600)


def test_count_mismatch_rejected():
    d = gauss_dist(2, 10)
    sym = rand_symbols(3, 10)
    payload = entropy.range_encode(sym, d)
    with pytest.raises(entropy.DistributionError):
        entropy.range_decode(payload, d, 11)


def test_golden_payload_stable():
    n = 4096
    i = np.arange(n, dtype=np.int64)
    sym = ((i * 2654435761) % 255 - 127).astype(np.int32)
    mu = ((i * 40503) % 17 - 8).astype(np.float64) / 4.0
    sigma = 0.5 + ((i * 9973) % 29).astype(np.float64) / 4.0
    dist = entropy.SymbolDistribution.gaussian(mu, sigma, (n,))
    payload = entropy.range_encode(sym, dist)
    with open(os.path.join(DATA, "golden_payload.bin"), "rb") as f:
        golden = f.read()
    assert payload.data == golden
    assert np.array_equal(entropy.range_decode(entropy.Bitpayload(golden, 8 * len(golden)),
                                               dist, n), sym)


def test_python_and_compiled_kernels_agree():
    from i2vc import _range_py
    try:
        from i2vc import _range_cy
    except ImportError:
        pytest.skip("compiled kernel not built")
    for seed in range(6):
        n = 512
        d = gauss_dist(seed + 30, n)
        sym = rand_symbols(seed + 31, n, spread=15.0)
        idx = d.bin_index(sym)
        a = _range_py.encode(idx, d.table_id, d.cumfreq)
        b = _range_cy.encode(idx, d.table_id, d.cumfreq)
        assert a == b
        assert np.array_equal(_range_py.decode(a, n, d.table_id, d.cumfreq),
                              _range_cy.decode(a, n, d.table_id, d.cumfreq))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 400))
def test_round_trip_property(seed, n):
    d = gauss_dist(seed % 1000, n)
    sym = rand_symbols(seed % 997 + 1, n, spread=40.0)
    payload = entropy.range_encode(sym, d)
    assert np.array_equal(entropy.range_decode(payload, d, n), sym)


# ---------------------------------------------------------------------------
# conditional prior
# ---------------------------------------------------------------------------

def test_intra_prior_zero_mean(weights):
    shape = stvc.bottleneck_shape((48, 8, 8))
    d = entropy.context_params(None, 64.0, weights, shape=shape)
    assert np.all(d.mu == 0.0)
    assert d.shape == shape


def test_intra_prior_needs_shape(weights):
    with pytest.raises(entropy.DistributionError):
        entropy.context_params(None, 64.0, weights)


def test_zero_reference_gives_zero_mean_floor_sigma(weights):
    ref = np.zeros((48, 8, 8))
    d = entropy.context_params(ref, 64.0, weights)
    assert np.all(d.mu == 0.0)
    assert np.all(d.sigma == entropy.SIGMA_FLOOR)


def test_distinct_refs_distinct_params(weights):
    r1 = _detrand.normals(1, (48, 8, 8))
    r2 = _detrand.normals(2, (48, 8, 8))
    d1 = entropy.context_params(r1, 64.0, weights)
    d2 = entropy.context_params(r2, 64.0, weights)
    assert not np.array_equal(d1.mu, d2.mu)
    assert not np.array_equal(d1.sigma, d2.sigma)


def test_dimension_mismatch_rejected(weights):
    with pytest.raises(entropy.DistributionError):
        entropy.context_params(np.zeros((47, 8, 8)), 64.0, weights)


def test_conditional_prior_beats_intra_on_matching_content(transform, weights):
    # reference equal to the (decoded) target: conditional coding spends fewer bits
    from i2vc import harness
    frame = harness.synth_sequence("static", 1, dims=(32, 32), seed=5)[0]
    y = transform.to_latent(frame)
    lam = 64.0
    sym_i = stvc.quantize(stvc.analysis_transform(y, None, lam, weights))
    d_i = entropy.context_params(None, lam, weights, shape=sym_i.shape)
    ref, _ = stvc.decode_feature(sym_i, None, lam, weights, latent_hw=y.shape[1:])
    sym_p = stvc.quantize(stvc.analysis_transform(y, ref, lam, weights))
    d_p = entropy.context_params(ref, lam, weights)
    bits_i = entropy.estimate_rate(sym_i, d_i)
    bits_p = entropy.estimate_rate(sym_p, d_p)
    assert bits_p < bits_i
