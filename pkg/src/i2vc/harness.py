"""Objective computation, synthetic sequences, R-D sweeps, coordinate tuner.

The objective is rate + lambda * (distortion + beta * perceptual proxy), with
rate in bits per pixel from actual payload bytes, distortion as MSE, and the
perceptual proxy the mean MSE between gradient-magnitude maps at three dyadic
scales (a trainless stand-in clearly labeled "proxy" in all outputs).
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass

import numpy as np

from . import _detrand, gop, stvc
from ._nnops import blockmean2

BETA_DEFAULT = 0.05
PSNR_CAP = 99.0
CSV_HEADER = "mode,lambda,frame,bpp,mse,psnr,proxy,loss"


def mse(x: np.ndarray, x_hat: np.ndarray) -> float:
    if x.shape != x_hat.shape:
        raise ValueError(f"dims mismatch {x.shape} vs {x_hat.shape}")
    d = x - x_hat
    return float(np.mean(d * d))


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against max pixel value 1.0."""
    m = mse(x, x_hat)
    if m <= 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / m))


def _grad_mag_hw(img: np.ndarray) -> np.ndarray:
    gy = np.zeros_like(img)
    gx = np.zeros_like(img)
    gy[1:-1] = 0.5 * (img[2:] - img[:-2])
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    return np.sqrt(gx * gx + gy * gy)


def perceptual_proxy(x: np.ndarray, x_hat: np.ndarray) -> float:
    """MSE between gradient-magnitude maps at 3 dyadic scales, averaged."""
    if x.shape != x_hat.shape:
        raise ValueError(f"dims mismatch {x.shape} vs {x_hat.shape}")
    a = x.mean(axis=2)
    b = x_hat.mean(axis=2)
    vals = []
    for _ in range(3):
        da = _grad_mag_hw(a)
        db = _grad_mag_hw(b)
        vals.append(float(np.mean((da - db) ** 2)))
        a = blockmean2(a)
        b = blockmean2(b)
    return float(np.mean(vals))


def combine_terms(rate: float, distortion: float, perception: float, lam: float,
                  beta: float = BETA_DEFAULT) -> float:
    """The scalar objective: rate + lambda * (distortion + beta * perception)."""
    return rate + lam * (distortion + beta * perception)


def compute_loss(x: np.ndarray, x_hat: np.ndarray, bits: float, lam: float,
                 beta: float = BETA_DEFAULT) -> float:
    """Objective for a frame pair, rate in bits per pixel."""
    if x.shape != x_hat.shape:
        raise ValueError(f"dims mismatch {x.shape} vs {x_hat.shape}")
    if bits < 0:
        raise ValueError("bits must be >= 0")
    h, w, _ = x.shape
    return combine_terms(bits / (h * w), mse(x, x_hat),
                         perceptual_proxy(x, x_hat), lam, beta)


@dataclass(frozen=True)
class RdPoint:
    mode: str
    lam: float
    frame: int | None      # None = aggregate over the sequence
    bpp: float
    mse: float
    psnr: float
    proxy: float
    loss: float

    def csv_row(self) -> str:
        frame = "-" if self.frame is None else str(self.frame)
        return (f"{self.mode},{self.lam:g},{frame},{self.bpp:.8f},{self.mse:.10e},"
                f"{self.psnr:.4f},{self.proxy:.10e},{self.loss:.8f}")


# ---------------------------------------------------------------------------
# synthetic sequences
# ---------------------------------------------------------------------------

def _smooth_card(dims, seed):
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ph = _detrand.uniforms(seed, (6,)) * 2 * np.pi
    base = (0.5
            + 0.18 * np.sin(2 * np.pi * xx / w + ph[0]) * np.cos(2 * np.pi * yy / h + ph[1])
            + 0.12 * np.sin(4 * np.pi * (xx + yy) / (w + h) + ph[2]))
    frame = np.stack([
        base,
        0.5 + 0.15 * np.cos(2 * np.pi * xx / w + ph[3]),
        0.5 + 0.15 * np.sin(2 * np.pi * yy / h + ph[4]),
    ], axis=2)
    return np.clip(frame, 0.0, 1.0)


def _square_pos(i, step, span, margin):
    # ping-pong inside the span so every frame index is valid
    x = (step * i) % (2 * span) if span > 0 else 0
    return margin + (x if x <= span else 2 * span - x)


def _texture(dims, seed):
    u = _detrand.uniforms(seed, dims)
    return 0.25 + 0.5 * u


def synth_sequence(kind: str, n: int, dims=(64, 64), seed: int = 0, step: int = 2,
                   square: int = 12, margin: int = 4):
    """Deterministic seeded test sequences with analytic motion ground truth."""
    if n < 1:
        raise ValueError("need n >= 1 frames")
    h, w = dims
    card = _smooth_card(dims, _detrand.mix(seed, 0xCA4D))
    if kind == "static":
        return [card.copy() for _ in range(n)]
    if kind == "noise":
        return [np.clip(_detrand.uniforms(_detrand.mix(seed, 0x40, i), (h, w, 3)), 0, 1)
                for i in range(n)]
    if kind == "zoom":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        r = np.sqrt((yy - h / 2) ** 2 + (xx - w / 2) ** 2)
        frames = []
        for i in range(n):
            rings = 0.5 + 0.3 * np.sin(r / (3.0 * (1.0 + 0.02 * i)))
            frames.append(np.clip(card * 0.5 + rings[:, :, None] * 0.5, 0, 1))
        return frames
    if kind == "moving_square":
        if square > min(h, w) or square + 2 * margin > w:
            raise ValueError(f"square {square} with margin {margin} exceeds dims {dims}")
        tex = _texture((square, square), _detrand.mix(seed, 0x7E))
        span = max(w - square - 2 * margin, 0)
        y0 = h // 2 - square // 2
        frames = []
        for i in range(n):
            f = card.copy()
            x0 = _square_pos(i, step, span, margin)
            f[y0:y0 + square, x0:x0 + square, :] = tex[:, :, None]
            frames.append(f)
        return frames
    raise ValueError(f"unknown sequence kind {kind!r}")


def changed_region(kind: str, i: int, dims=(64, 64), step: int = 2,
                   square: int = 12, margin: int = 4) -> np.ndarray:
    """Ground-truth changed-pixel mask between frames i-1 and i (bool, HxW)."""
    h, w = dims
    mask = np.zeros((h, w), dtype=bool)
    if kind == "static":
        return mask
    if kind != "moving_square":
        raise ValueError(f"no analytic change mask for kind {kind!r}")
    span = max(w - square - 2 * margin, 0)
    y0 = h // 2 - square // 2
    for j in (i - 1, i):
        x0 = _square_pos(j, step, span, margin)
        mask[y0:y0 + square, x0:x0 + square] = True
    return mask


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def evaluate_sequence(frames, cfg: gop.GopConfig, lam, weights, sched, pred, *,
                      transform, seed=0, t_inv=None, start_step=None,
                      beta=BETA_DEFAULT):
    """Run the encoder pipeline once; per-frame and aggregate RdPoints."""
    records, recons, _ = gop.encode_sequence(
        frames, cfg, lam, weights, sched, pred,
        transform=transform, seed=seed, t_inv=t_inv, start_step=start_step)
    bits = {r.display_index: r.payload.bit_length for r in records}
    h, w, _ = frames[0].shape
    pts = []
    for i, (x, xh) in enumerate(zip(frames, recons)):
        m = mse(x, xh)
        pts.append(RdPoint(cfg.mode, lam, i, bits[i] / (h * w), m, psnr(x, xh),
                           perceptual_proxy(x, xh),
                           compute_loss(x, xh, bits[i], lam, beta)))
    total_bits = sum(bits.values())
    agg = RdPoint(
        cfg.mode, lam, None,
        total_bits / (len(frames) * h * w),
        float(np.mean([p.mse for p in pts])),
        float(np.mean([p.psnr for p in pts])),
        float(np.mean([p.proxy for p in pts])),
        float(np.mean([p.loss for p in pts])),
    )
    return pts, agg


def rd_sweep(frames, cfg: gop.GopConfig, lam_grid, weights, sched, pred, *,
             transform, seed=0, t_inv=None, start_step=None, beta=BETA_DEFAULT,
             csv_out=None, include_frames=False):
    """One aggregate point per lambda; optionally stream CSV to a file object."""
    for lam in lam_grid:
        stvc.validate_lambda(lam)
    points = []
    rows = [CSV_HEADER]
    for lam in lam_grid:
        pts, agg = evaluate_sequence(frames, cfg, lam, weights, sched, pred,
                                     transform=transform, seed=seed, t_inv=t_inv,
                                     start_step=start_step, beta=beta)
        if include_frames:
            rows += [p.csv_row() for p in pts]
        rows.append(agg.csv_row())
        points.append(agg)
    if csv_out is not None:
        csv_out.write("\n".join(rows) + "\n")
    return points


def sweep_csv(frames, cfg, lam_grid, weights, sched, pred, **kw) -> str:
    buf = io.StringIO()
    rd_sweep(frames, cfg, lam_grid, weights, sched, pred, csv_out=buf, **kw)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# coordinate-descent tuner over the exposed scalar parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TunableParams:
    gain_exponent: float = 0.75
    gain_bias: float = 0.0
    sigma_scale_intra: float = 1.0
    sigma_scale_inter: float = 1.0
    occl_sharpness: float = 1.0
    start_offset: int = 0

    BOXES = {
        "gain_exponent": (0.05, 2.0),
        "gain_bias": (-1.5, 1.5),
        "sigma_scale_intra": (0.1, 4.0),
        "sigma_scale_inter": (0.1, 4.0),
        "occl_sharpness": (0.1, 10.0),
        "start_offset": (-10, 10),
    }

    def clamped(self) -> "TunableParams":
        vals = {}
        for name, (lo, hi) in self.BOXES.items():
            v = getattr(self, name)
            v = min(max(v, lo), hi)
            vals[name] = int(v) if name == "start_offset" else float(v)
        return TunableParams(**vals)

    def apply(self, weights: stvc.StvcWeights) -> stvc.StvcWeights:
        return weights.with_params(**dataclasses.asdict(self.clamped()))


def tune(params: TunableParams, frames, cfg, lam, budget: int, weights, sched,
         pred, *, transform, seed=0, beta=BETA_DEFAULT):
    """Coordinate descent accepting only strict loss decreases.

    Returns (best params, history of accepted losses). The first evaluation
    (the baseline) counts against the budget, so budget=1 returns the inputs
    unchanged.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")

    def loss_of(p: TunableParams) -> float:
        w = p.apply(weights)
        _, agg = evaluate_sequence(frames, cfg, lam, w, sched, pred,
                                   transform=transform, seed=seed, beta=beta)
        return agg.loss

    best = params.clamped()
    evals = 1
    best_loss = loss_of(best)
    history = [best_loss]
    # additive steps for exponent-like params, multiplicative for scales
    steps = {
        "gain_exponent": ("add", 0.2), "gain_bias": ("add", 0.4),
        "sigma_scale_intra": ("mul", 2.0), "sigma_scale_inter": ("mul", 2.0),
        "occl_sharpness": ("mul", 2.0), "start_offset": ("add", 3),
    }

    def stepped(p, name, sign):
        kind, s = steps[name]
        v = getattr(p, name)
        v = v + sign * s if kind == "add" else v * (s if sign > 0 else 1.0 / s)
        return dataclasses.replace(p, **{name: v}).clamped()

    while evals < budget:
        improved = False
        for name in steps:
            for sign in (+1, -1):
                moved = False
                # walk while the direction keeps improving
                while evals < budget:
                    cand = stepped(best, name, sign)
                    if cand == best:
                        break
                    cand_loss = loss_of(cand)
                    evals += 1
                    if cand_loss >= best_loss:
                        break
                    best, best_loss = cand, cand_loss
                    history.append(best_loss)
                    improved = moved = True
                if moved or evals >= budget:
                    break
            if evals >= budget:
                break
        if not improved:
            shrunk = False
            for name, (kind, s) in steps.items():
                if kind == "add":
                    nxt = s // 2 if name == "start_offset" else s * 0.5
                    if (name == "start_offset" and s > 1) or (name != "start_offset" and s > 1e-3):
                        steps[name] = (kind, max(nxt, 1) if name == "start_offset" else nxt)
                        shrunk = True
                else:
                    if s > 1.05:
                        steps[name] = (kind, max(np.sqrt(s), 1.05))
                        shrunk = True
            if not shrunk:
                break
    return best, history
