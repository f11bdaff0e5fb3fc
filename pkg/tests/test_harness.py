import dataclasses
import io

import numpy as np
import pytest

from i2vc import _detrand, gop, harness


def rand_frame(seed, h=16, w=16):
    return _detrand.uniforms(seed, (h, w, 3))


# ---------------------------------------------------------------------------
# objective arithmetic
# ---------------------------------------------------------------------------

def test_loss_hand_computed_case():
    # rate 1.0 bpp, distortion 0.01, perception 0.1, lambda 8, beta 0.05
    assert abs(harness.combine_terms(1.0, 0.01, 0.1, 8.0, 0.05) - 1.12) < 1e-12


def test_loss_constant_shift_frames():
    # frames realizing D = 0.01 exactly with zero perceptual proxy
    x = np.zeros((4, 4, 3))
    x_hat = np.full((4, 4, 3), 0.1)
    got = harness.compute_loss(x, x_hat, 16.0, 8.0, beta=0.05)
    assert harness.perceptual_proxy(x, x_hat) == 0.0
    assert abs(got - 1.08) < 1e-12


def test_loss_rational_cases_exact():
    h = w = 8
    x = np.zeros((h, w, 3))
    for lam in (8.0, 64.0, 512.0):
        for bits in (0.0, 64.0, 960.0):
            for delta in (0.0, 0.25, 0.5):
                x_hat = np.full((h, w, 3), delta)
                expect = bits / 64.0 + lam * (delta * delta + 0.05 * 0.0)
                assert abs(harness.compute_loss(x, x_hat, bits, lam) - expect) < 1e-12


def test_identical_frames_loss_is_rate():
    x = rand_frame(1)
    assert harness.compute_loss(x, x.copy(), 128.0, 512.0) == pytest.approx(0.5, abs=1e-15)


def test_loss_increases_in_bits():
    x, x_hat = rand_frame(2), rand_frame(3)
    l1 = harness.compute_loss(x, x_hat, 100.0, 64.0)
    l2 = harness.compute_loss(x, x_hat, 200.0, 64.0)
    assert l2 > l1


def test_negative_bits_rejected():
    x = rand_frame(4)
    with pytest.raises(ValueError):
        harness.compute_loss(x, x, -1.0, 64.0)


def test_psnr_formula():
    x = np.zeros((8, 8, 3))
    x_hat = np.full((8, 8, 3), 0.1)
    assert harness.psnr(x, x_hat) == pytest.approx(20.0, abs=1e-9)
    assert harness.psnr(x, x) == 99.0


def test_psnr_mse_inverse_relation():
    for seed in range(10):
        x, x_hat = rand_frame(seed), rand_frame(seed + 50)
        m = harness.mse(x, x_hat)
        assert harness.psnr(x, x_hat) == pytest.approx(10 * np.log10(1 / m), abs=1e-9)


def test_proxy_zero_on_identical():
    x = rand_frame(5)
    assert harness.perceptual_proxy(x, x.copy()) == 0.0


def test_blur_degrades_proxy_more_than_equal_mse_noise():
    card = harness.synth_sequence("moving_square", 1, dims=(64, 64), seed=3)[0]
    from i2vc._nnops import box_blur3
    blurred = box_blur3(card.transpose(2, 0, 1)).transpose(1, 2, 0)
    mse_blur = harness.mse(card, blurred)
    noise = _detrand.normals(9, card.shape)
    noise *= np.sqrt(mse_blur / np.mean(noise ** 2))
    noisy = card + noise
    assert abs(harness.mse(card, noisy) - mse_blur) / mse_blur < 1e-9
    assert harness.perceptual_proxy(card, blurred) > harness.perceptual_proxy(card, noisy)


# ---------------------------------------------------------------------------
# synthetic sequences
# ---------------------------------------------------------------------------

def test_static_sequence_identical_frames():
    frames = harness.synth_sequence("static", 32, dims=(16, 16), seed=1)
    assert len(frames) == 32
    for f in frames[1:]:
        assert np.array_equal(f, frames[0])


def test_sequences_reproducible_and_in_range():
    for kind in ("static", "moving_square", "zoom", "noise"):
        a = harness.synth_sequence(kind, 3, dims=(32, 32), seed=4)
        b = harness.synth_sequence(kind, 3, dims=(32, 32), seed=4)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa, fb)
            assert fa.min() >= 0.0 and fa.max() <= 1.0


def test_moving_square_changed_region_is_union():
    dims = (32, 32)
    frames = harness.synth_sequence("moving_square", 3, dims=dims, seed=2,
                                    step=2, square=8, margin=2)
    mask = harness.changed_region("moving_square", 2, dims=dims, step=2,
                                  square=8, margin=2)
    diff = np.any(frames[2] != frames[1], axis=2)
    assert np.all(diff <= mask)  # every changed pixel is inside the union
    # and the union is exactly the two square positions
    assert mask.sum() == 8 * (8 + 2)


def test_static_changed_region_empty():
    assert not harness.changed_region("static", 1, dims=(16, 16)).any()


def test_bad_kind_rejected():
    with pytest.raises(ValueError):
        harness.synth_sequence("wibble", 2)
    with pytest.raises(ValueError):
        harness.synth_sequence("static", 0)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_rd_sweep_rows_and_monotonicity(small_frames, weights, sched, pred, transform):
    cfg = gop.GopConfig(mode="LDP", gop_size=4)
    buf = io.StringIO()
    pts = harness.rd_sweep(small_frames, cfg, [8.0, 64.0, 512.0], weights, sched,
                           pred, transform=transform, seed=7, csv_out=buf)
    assert len(pts) == 3
    bpps = [p.bpp for p in pts]
    assert bpps[0] < bpps[1] < bpps[2]
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == harness.CSV_HEADER
    assert len(lines) == 4
    assert all(line.split(",")[2] == "-" for line in lines[1:])


def test_rd_sweep_csv_deterministic(small_frames, weights, sched, pred, transform):
    cfg = gop.GopConfig(mode="LDP", gop_size=4)
    a = harness.sweep_csv(small_frames, cfg, [64.0], weights, sched, pred,
                          transform=transform, seed=7)
    b = harness.sweep_csv(small_frames, cfg, [64.0], weights, sched, pred,
                          transform=transform, seed=7)
    assert a == b


def test_rd_sweep_per_frame_rows(small_frames, weights, sched, pred, transform):
    cfg = gop.GopConfig(mode="AI", gop_size=4)
    csv = harness.sweep_csv(small_frames, cfg, [64.0], weights, sched, pred,
                            transform=transform, seed=7, include_frames=True)
    lines = csv.strip().splitlines()
    assert len(lines) == 1 + 4 + 1  # header, four frames, aggregate
    assert lines[-1].split(",")[2] == "-"


def test_ai_bpp_not_below_ldp_on_static(weights, sched, pred, transform):
    frames = harness.synth_sequence("static", 4, dims=(32, 32), seed=5)
    ai = harness.rd_sweep(frames, gop.GopConfig(mode="AI", gop_size=4), [64.0],
                          weights, sched, pred, transform=transform, seed=7)[0]
    ldp = harness.rd_sweep(frames, gop.GopConfig(mode="LDP", gop_size=4), [64.0],
                           weights, sched, pred, transform=transform, seed=7)[0]
    assert ai.bpp >= ldp.bpp


# ---------------------------------------------------------------------------
# tuner
# ---------------------------------------------------------------------------

def test_tuner_single_eval_unchanged(small_frames, weights, sched, pred, transform):
    params = harness.TunableParams()
    best, hist = harness.tune(params, small_frames, gop.GopConfig(mode="LDP", gop_size=4),
                              16.0, 1, weights, sched, pred, transform=transform, seed=7)
    assert best == params
    assert len(hist) == 1


def test_tuner_never_increases_loss(small_frames, weights, sched, pred, transform):
    best, hist = harness.tune(harness.TunableParams(), small_frames,
                              gop.GopConfig(mode="LDP", gop_size=4), 16.0, 25,
                              weights, sched, pred, transform=transform, seed=7)
    assert hist[-1] <= hist[0]
    assert all(b < a for a, b in zip(hist, hist[1:]))


def test_tuner_respects_boxes(small_frames, weights, sched, pred, transform):
    start = harness.TunableParams(sigma_scale_inter=0.1)
    best, _ = harness.tune(start, small_frames, gop.GopConfig(mode="LDP", gop_size=4),
                           16.0, 15, weights, sched, pred, transform=transform, seed=7)
    for name, (lo, hi) in harness.TunableParams.BOXES.items():
        assert lo <= getattr(best, name) <= hi


def test_params_clamped():
    p = harness.TunableParams(gain_exponent=99.0, start_offset=-99).clamped()
    assert p.gain_exponent == 2.0
    assert p.start_offset == -10


def test_params_apply(weights):
    p = harness.TunableParams(gain_exponent=0.4, occl_sharpness=2.0)
    w2 = p.apply(weights)
    assert w2.gain_exponent == 0.4
    assert w2.occl_sharpness == 2.0
    assert w2 is not weights
