"""Deterministic diffusion machinery: schedule, transitions, masked inversion.

The schedule subsamples a linear-beta base schedule into T cumulative
signal-retention coefficients (alpha_bar, strictly decreasing from exactly 1).
All updates are the deterministic limit of the transition kernel (no injected
randomness), which is what makes encoder/decoder lockstep and the closed-form
tests possible:

    denoise:  y_{t-1} = sqrt(ab_{t-1}) * (y_t - sqrt(1-ab_t)*e) / sqrt(ab_t)
                        + sqrt(1-ab_{t-1}) * e,          e = eps(y_t, t, cond)
    invert:   y_t     = sqrt(ab_t) * (y_{t-1} - sqrt(1-ab_{t-1})*m*e) / sqrt(ab_{t-1})
                        + sqrt(1-ab_t) * m*e,            e = eps(y_{t-1}, t-1, None)

where m is the importance mask gating noise injection per element. The noise
predictor is a seeded stand-in for a pretrained denoiser: an analytic pull
toward the conditioning (or a self-blur when unconditioned) plus a small
3-level U-shaped conv net, all seed-generated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _detrand
from ._nnops import box_blur3, conv2d, conv2d_transpose, crop_to, relu


class ScheduleError(ValueError):
    pass


class StepRangeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    t_steps: int
    alpha_bar: np.ndarray       # length t_steps + 1, alpha_bar[0] == 1, strictly decreasing
    base_steps: int
    beta_start: float
    beta_end: float
    taus: np.ndarray            # base-schedule indices actually sampled


def build_schedule(t_steps: int = 30, base_steps: int = 1000,
                   beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    if not 1 <= t_steps <= base_steps:
        raise ScheduleError(f"need 1 <= T <= {base_steps}, got {t_steps}")
    betas = np.linspace(beta_start, beta_end, base_steps)
    abar_full = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    taus = np.rint(np.linspace(0, base_steps, t_steps + 1)).astype(np.int64)
    for i in range(1, t_steps + 1):       # de-duplicate rounding collisions
        taus[i] = max(taus[i], taus[i - 1] + 1)
    if taus[-1] > base_steps:
        raise ScheduleError("subsampling failed; t_steps too close to base_steps")
    alpha_bar = abar_full[taus]
    assert alpha_bar[0] == 1.0 and np.all(np.diff(alpha_bar) < 0)
    return DiffusionSchedule(t_steps=t_steps, alpha_bar=alpha_bar,
                             base_steps=base_steps, beta_start=beta_start,
                             beta_end=beta_end, taus=taus)


def dump_schedule_text(sched: DiffusionSchedule) -> str:
    lines = ["# t tau alpha_bar"]
    for t in range(sched.t_steps + 1):
        lines.append(f"{t} {int(sched.taus[t])} {sched.alpha_bar[t]:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# noise predictors
# ---------------------------------------------------------------------------

class ZeroPredictor:
    """Analytic eps == 0 predictor for closed-form tests."""

    def predict(self, state, t, cond):
        return np.zeros_like(state)


class SeededPredictor:
    """Seed-deterministic noise predictor with conditioning by concatenation.

    eps(y, t, c) = s * (y - sqrt(ab_t) * target) / max(sqrt(1-ab_t), sqrt(1-ab_1))
                   + unet(y, t, c) * unet_scale

    with target = c and s = pull when conditioned; unconditioned calls use a
    3x3 self-blur target and s = pull_uncond. The conditioned pull drives the
    chain toward the conditioning feature (at s = 1 the final step lands on it
    exactly up to the net residual); the unconditioned branch is kept gentle
    because inversion evaluates it at the previous state, and its one-step lag
    is what bounds the invert/denoise cycle error. The net is a small seeded
    3-level conv net. Output dims always equal input dims.
    """

    _CH = (16, 24, 32)

    def __init__(self, seed: int, channels: int, sched: DiffusionSchedule,
                 unet_scale: float = 0.01, pull: float = 1.0,
                 pull_uncond: float = 0.004):
        self.seed = seed
        self.channels = channels
        self.sched = sched
        self.unet_scale = float(unet_scale)
        self.pull = float(pull)
        self.pull_uncond = float(pull_uncond)
        c = channels
        c1, c2, c3 = self._CH
        t = lambda *tags: _detrand.mix(seed, 0xE9, *tags)
        he = lambda s, shape: _detrand.normals(s, shape) * np.sqrt(2.0 / (shape[1] * 9))
        self.w_in = he(t(1), (c1, 2 * c, 3, 3))
        self.w_d1 = he(t(2), (c2, c1, 3, 3))
        self.w_d2 = he(t(3), (c3, c2, 3, 3))
        self.w_u1 = he(t(4), (c2, c3, 3, 3))
        self.w_m1 = he(t(5), (c2, c2, 3, 3))
        self.w_u2 = he(t(6), (c1, c2, 3, 3))
        self.w_m2 = he(t(7), (c1, c1, 3, 3))
        self.w_out = _detrand.normals(t(8), (c, c1, 3, 3)) * 0.05
        self.temb_w = _detrand.normals(t(9), (c1, 8)) * 0.1

    def _time_bias(self, t: int) -> np.ndarray:
        phase = t / max(self.sched.t_steps, 1)
        freqs = 2.0 ** np.arange(4)
        vec = np.concatenate([np.sin(np.pi * phase * freqs), np.cos(np.pi * phase * freqs)])
        return (self.temb_w @ vec)[:, None, None]

    def _unet(self, y, t, cond):
        x = np.concatenate([y, cond if cond is not None else box_blur3(y)], axis=0)
        e1 = relu(conv2d(x, self.w_in) + self._time_bias(t))
        d1 = relu(conv2d(e1, self.w_d1, stride=2))
        d2 = relu(conv2d(d1, self.w_d2, stride=2))
        u1 = conv2d_transpose(d2, self.w_u1, stride=2)
        u1 = relu(conv2d(crop_to(u1, *d1.shape[1:]) + d1, self.w_m1))
        u2 = conv2d_transpose(u1, self.w_u2, stride=2)
        u2 = relu(conv2d(crop_to(u2, *e1.shape[1:]) + e1, self.w_m2))
        return conv2d(u2, self.w_out)

    def predict(self, state, t, cond):
        if cond is not None and cond.shape != state.shape:
            raise ValueError(f"conditioning dims {cond.shape} != state dims {state.shape}")
        ab = self.sched.alpha_bar
        if cond is not None:
            target, s = cond, self.pull
        else:
            target, s = box_blur3(state), self.pull_uncond
        denom = max(np.sqrt(1.0 - ab[t]), np.sqrt(1.0 - ab[1]))
        eps = s * (state - np.sqrt(ab[t]) * target) / denom
        if self.unet_scale != 0.0:
            eps = eps + self.unet_scale * self._unet(state, t, cond)
        return eps


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def _check_step(t: int, sched: DiffusionSchedule) -> None:
    if not 1 <= t <= sched.t_steps:
        raise StepRangeError(f"step {t} outside [1, {sched.t_steps}]")


def denoise_step(y_t, t, cond, sched: DiffusionSchedule, pred):
    _check_step(t, sched)
    eps = pred.predict(y_t, t, cond)
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t - 1]
    return (np.sqrt(ab_p) * (y_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
            + np.sqrt(1.0 - ab_p) * eps)


def masked_invert_step(y_prev, t, mask, sched: DiffusionSchedule, pred):
    _check_step(t, sched)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != y_prev.shape:
        raise ValueError(f"mask dims {mask.shape} != state dims {y_prev.shape}")
    eps = pred.predict(y_prev, t - 1, None)
    me = mask * eps
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t - 1]
    return (np.sqrt(ab_t) * (y_prev - np.sqrt(1.0 - ab_p) * me) / np.sqrt(ab_p)
            + np.sqrt(1.0 - ab_t) * me)


def invert(y_ref, mask, t_prime: int, sched: DiffusionSchedule, pred):
    """Masked inversion: t_prime composed steps from the clean reference."""
    if not 0 <= t_prime <= sched.t_steps:
        raise StepRangeError(f"inversion steps {t_prime} outside [0, {sched.t_steps}]")
    if np.isscalar(mask):
        mask = np.full_like(y_ref, float(mask))
    y = y_ref
    for t in range(1, t_prime + 1):
        y = masked_invert_step(y, t, mask, sched, pred)
    return y


def denoise_from(y_start, start_step: int, cond, sched: DiffusionSchedule, pred):
    """Denoise chain from start_step down to 1; start_step=0 is the identity."""
    if not 0 <= start_step <= sched.t_steps:
        raise StepRangeError(f"start step {start_step} outside [0, {sched.t_steps}]")
    y = y_start
    for t in range(start_step, 0, -1):
        y = denoise_step(y, t, cond, sched, pred)
    return y


def implicit_motion(y_ref, y0):
    """Alignment diagnostic: elementwise displacement proxy between the
    reference feature and the denoised output."""
    if y_ref.shape != y0.shape:
        raise ValueError(f"dims mismatch {y_ref.shape} vs {y0.shape}")
    return y0 - y_ref


def motion_stats(m: np.ndarray) -> dict:
    return {
        "l2": float(np.sqrt(np.sum(m * m))),
        "linf": float(np.max(np.abs(m))) if m.size else 0.0,
        "energy": float(np.sum(m * m)),
    }


def intra_noise(shape, seed: int) -> np.ndarray:
    """Seeded standard-normal initial state for intra frames."""
    return _detrand.normals(seed, shape)


# ---------------------------------------------------------------------------
# predictor snapshot (seed + dims; parameters are regenerated from the seed)
# ---------------------------------------------------------------------------

PREDICTOR_MAGIC = b"I2VP"


def save_predictor(path, pred: SeededPredictor) -> None:
    with open(path, "wb") as f:
        f.write(PREDICTOR_MAGIC)
        f.write(struct.pack("<BQBddd", 1, pred.seed & 0xFFFFFFFFFFFFFFFF,
                            pred.channels, pred.unet_scale, pred.pull,
                            pred.pull_uncond))
        f.write(struct.pack("<HHdd", pred.sched.t_steps, pred.sched.base_steps,
                            pred.sched.beta_start, pred.sched.beta_end))


def load_predictor(path) -> SeededPredictor:
    with open(path, "rb") as f:
        if f.read(4) != PREDICTOR_MAGIC:
            raise ValueError(f"{path}: bad predictor magic")
        version, seed, channels, unet_scale, pull, pull_uncond = \
            struct.unpack("<BQBddd", f.read(34))
        if version != 1:
            raise ValueError(f"{path}: unsupported predictor version {version}")
        t_steps, base_steps, beta_start, beta_end = struct.unpack("<HHdd", f.read(20))
    sched = build_schedule(t_steps, base_steps, beta_start, beta_end)
    return SeededPredictor(seed=seed, channels=channels, sched=sched,
                           unet_scale=unet_scale, pull=pull,
                           pull_uncond=pull_uncond)
