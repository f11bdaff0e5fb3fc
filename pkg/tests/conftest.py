import numpy as np
import pytest

from i2vc import diffusion, gop, harness, latent, stvc

SEED = 7


@pytest.fixture(scope="session")
def transform():
    return latent.LatentTransform(seed=SEED)


@pytest.fixture(scope="session")
def weights():
    return stvc.make_weights(seed=SEED)


@pytest.fixture(scope="session")
def sched():
    return diffusion.build_schedule(30)


@pytest.fixture(scope="session")
def pred(sched):
    return diffusion.SeededPredictor(seed=SEED, channels=48, sched=sched)


@pytest.fixture(scope="session")
def zero_pred():
    return diffusion.ZeroPredictor()


@pytest.fixture(scope="session")
def small_frames():
    # 4 frames at 32x32: latent 48x8x8, bottleneck 48x2x2
    return harness.synth_sequence("moving_square", 4, dims=(32, 32), seed=2)


@pytest.fixture(scope="session")
def small_latents(transform, small_frames):
    return [transform.to_latent(f) for f in small_frames]


def run_pipeline(frames, mode, lam, weights, sched, pred, transform, *,
                 gop_size=None, p_count=3, i_count=2, seed=SEED, debug_store=None):
    """Encode a sequence collecting per-frame debug state; returns records, recons."""
    cfg = gop.GopConfig(mode=mode, gop_size=gop_size or len(frames),
                        p_count=p_count, i_count=i_count)
    entries = gop.schedule(cfg)
    buf = gop.FeatureBuffer()
    records = {}
    recons = [None] * len(frames)
    for e in sorted(entries, key=lambda e: e.coding_order):
        dbg = {}
        payload, recon, feat = gop.compress_frame(
            frames[e.display_index], buf, e, lam, weights, sched, pred,
            transform=transform,
            noise_seed=gop.frame_noise_seed(seed, e.display_index), debug=dbg)
        records[e.display_index] = payload
        recons[e.display_index] = recon
        if debug_store is not None:
            debug_store[e.display_index] = dbg
    return records, recons
