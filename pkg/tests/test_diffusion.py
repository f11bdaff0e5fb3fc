import numpy as np
import pytest

from i2vc import _detrand, diffusion


def rand_latent(seed, shape=(48, 16, 16)):
    return _detrand.normals(seed, shape)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_schedule_t1():
    s = diffusion.build_schedule(1)
    assert s.alpha_bar.shape == (2,)
    assert s.alpha_bar[0] == 1.0 > s.alpha_bar[1] > 0.0


def test_schedule_t30_monotone():
    s = diffusion.build_schedule(30)
    assert s.alpha_bar.shape == (31,)
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar <= 1))


def test_schedule_matches_bruteforce_product():
    s = diffusion.build_schedule(30)
    betas = np.linspace(1e-4, 2e-2, 1000)
    for t in range(31):
        prod = 1.0
        for k in range(int(s.taus[t])):
            prod *= 1.0 - betas[k]
        assert abs(prod - s.alpha_bar[t]) < 1e-12


def test_schedule_invalid_t():
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(0)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(1001)


def test_schedule_dense_subsampling_valid():
    s = diffusion.build_schedule(999)
    assert np.all(np.diff(s.taus) >= 1)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_schedule_dump_text():
    s = diffusion.build_schedule(5)
    txt = diffusion.dump_schedule_text(s)
    lines = txt.strip().splitlines()
    assert len(lines) == 7  # header + T+1 rows
    assert lines[1].startswith("0 0 1")


# ---------------------------------------------------------------------------
# closed forms with eps == 0
# ---------------------------------------------------------------------------

def test_denoise_step_zero_eps(sched, zero_pred):
    y = rand_latent(1)
    t = 12
    out = diffusion.denoise_step(y, t, None, sched, zero_pred)
    scale = np.sqrt(sched.alpha_bar[t - 1] / sched.alpha_bar[t])
    assert np.abs(out - scale * y).max() < 1e-12 * max(1.0, np.abs(scale * y).max())


def test_denoise_chain_telescopes(sched, zero_pred):
    y = rand_latent(2)
    out = diffusion.denoise_from(y, 30, None, sched, zero_pred)
    expect = y / np.sqrt(sched.alpha_bar[30])
    assert np.abs(out - expect).max() / np.abs(expect).max() < 1e-12


def test_invert_chain_telescopes(sched, zero_pred):
    y = rand_latent(3)
    out = diffusion.invert(y, 0.0, 15, sched, zero_pred)
    expect = np.sqrt(sched.alpha_bar[15]) * y
    assert np.abs(out - expect).max() < 1e-12


def test_invert_zero_mask_with_seeded_predictor(sched, pred):
    # omega == 0 kills the noise term regardless of the predictor
    y = rand_latent(4)
    out = diffusion.invert(y, 0.0, 15, sched, pred)
    expect = np.sqrt(sched.alpha_bar[15]) * y
    assert np.abs(out - expect).max() < 1e-12


def test_invert_t0_identity(sched, pred):
    y = rand_latent(5)
    out = diffusion.invert(y, 1.0, 0, sched, pred)
    assert np.array_equal(out, y)


def test_denoise_from_zero_identity(sched, pred):
    y = rand_latent(6)
    assert np.array_equal(diffusion.denoise_from(y, 0, None, sched, pred), y)


# ---------------------------------------------------------------------------
# masked inversion
# ---------------------------------------------------------------------------

def test_mask_identity_is_standard_inversion(sched, pred):
    y = rand_latent(7)
    ones = np.ones_like(y)
    a = diffusion.masked_invert_step(y, 3, ones, sched, pred)
    # reference formula with the full (unmasked) noise estimate
    eps = pred.predict(y, 2, None)
    ab_t, ab_p = sched.alpha_bar[3], sched.alpha_bar[2]
    b = (np.sqrt(ab_t) * (y - np.sqrt(1 - ab_p) * eps) / np.sqrt(ab_p)
         + np.sqrt(1 - ab_t) * eps)
    assert np.array_equal(a, b)


def test_mask_locality(sched, pred):
    # elements with omega == 0 receive no eps contribution: they match the
    # omega==0 closed form exactly while omega==1 elements differ from it
    y = rand_latent(8)
    mask = np.zeros_like(y)
    mask[:, :8, :] = 1.0
    out = diffusion.masked_invert_step(y, 5, mask, sched, pred)
    pure = np.sqrt(sched.alpha_bar[5] / sched.alpha_bar[4]) * y
    off = mask == 0.0
    assert np.abs(out[off] - pure[off]).max() < 1e-12
    assert np.abs(out[~off] - pure[~off]).max() > 1e-6


def test_mask_dims_checked(sched, pred):
    with pytest.raises(ValueError):
        diffusion.masked_invert_step(rand_latent(9), 3, np.ones((48, 8, 8)), sched, pred)


def test_step_range_checked(sched, pred):
    y = rand_latent(10)
    with pytest.raises(diffusion.StepRangeError):
        diffusion.denoise_step(y, 0, None, sched, pred)
    with pytest.raises(diffusion.StepRangeError):
        diffusion.denoise_step(y, 31, None, sched, pred)
    with pytest.raises(diffusion.StepRangeError):
        diffusion.invert(y, 1.0, 31, sched, pred)
    with pytest.raises(diffusion.StepRangeError):
        diffusion.denoise_from(y, 31, None, sched, pred)


# ---------------------------------------------------------------------------
# inversion-denoise cycle and determinism
# ---------------------------------------------------------------------------

def test_invert_denoise_cycle_tight(sched, pred):
    for seed in (100, 101, 102):
        y = rand_latent(seed)
        y_mid = diffusion.invert(y, 1.0, 15, sched, pred)
        back = diffusion.denoise_from(y_mid, 15, None, sched, pred)
        rel = np.linalg.norm(back - y) / np.linalg.norm(y)
        assert rel <= 1e-2


def test_full_chain_bit_reproducible(sched, pred):
    y0 = diffusion.intra_noise((48, 16, 16), 1234)
    cond = rand_latent(11)
    a = diffusion.denoise_from(y0, 30, cond, sched, pred)
    b = diffusion.denoise_from(diffusion.intra_noise((48, 16, 16), 1234), 30, cond, sched, pred)
    assert np.array_equal(a, b)


def test_conditioning_sensitivity(sched, pred):
    y = rand_latent(12)
    c1 = rand_latent(13)
    c2 = rand_latent(14)
    a = diffusion.denoise_from(y, 15, c1, sched, pred)
    b = diffusion.denoise_from(y, 15, c2, sched, pred)
    assert np.linalg.norm(a - b) > 1e-3


def test_predictor_dims_preserved(sched, pred):
    y = rand_latent(15, (48, 4, 6))
    out = pred.predict(y, 3, None)
    assert out.shape == y.shape
    out = pred.predict(y, 3, rand_latent(16, (48, 4, 6)))
    assert out.shape == y.shape


def test_predictor_cond_dims_checked(sched, pred):
    with pytest.raises(ValueError):
        pred.predict(rand_latent(17), 3, rand_latent(18, (48, 8, 8)))


# ---------------------------------------------------------------------------
# implicit motion
# ---------------------------------------------------------------------------

def test_motion_zero_for_identical():
    y = rand_latent(19)
    m = diffusion.implicit_motion(y, y.copy())
    assert np.all(m == 0.0)
    stats = diffusion.motion_stats(m)
    assert stats["l2"] == 0.0 and stats["energy"] == 0.0


def test_motion_dims_checked():
    with pytest.raises(ValueError):
        diffusion.implicit_motion(rand_latent(1), rand_latent(2, (48, 8, 8)))


# ---------------------------------------------------------------------------
# predictor snapshot
# ---------------------------------------------------------------------------

def test_predictor_snapshot_round_trip(tmp_path, sched, pred):
    p = tmp_path / "pred.i2vp"
    diffusion.save_predictor(p, pred)
    back = diffusion.load_predictor(p)
    y = rand_latent(20)
    assert np.array_equal(pred.predict(y, 7, None), back.predict(y, 7, None))


def test_intra_noise_seeded():
    a = diffusion.intra_noise((48, 4, 4), 9)
    b = diffusion.intra_noise((48, 4, 4), 9)
    c = diffusion.intra_noise((48, 4, 4), 10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
