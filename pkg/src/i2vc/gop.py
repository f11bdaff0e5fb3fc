"""Frame-type scheduling, reference fusion, and per-frame orchestration.

Schedules realize the four coding configurations over a group of pictures:
all-intra (AI), low-delay P (LDP), low-delay B with P anchors (LDB) and
random-access (RA, I anchors at both ends with hierarchical B between). Coding
order places anchors first, then B frames by hierarchy level; every reference
is coded before its dependents.

compress_frame/decompress_frame run one frame through the full pipeline:
latent transform, reference selection (none / previous / occlusion-weighted
fusion), conditional encode + range coding, conditional decode, initial-state
construction (seeded noise for I, masked inversion of the reference for P/B),
conditioned denoising, and the inverse latent transform. The encoder runs the
identical decoder path locally, so both sides' feature buffers stay bit-exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _detrand, diffusion, entropy, stvc
from ._nnops import conv2d, sigmoid


class FrameType(enum.Enum):
    I = "I"
    P = "P"
    B = "B"


class InfeasibleGopError(ValueError):
    pass


class MissingReferenceError(KeyError):
    pass


@dataclass(frozen=True)
class GopConfig:
    mode: str = "LDP"
    gop_size: int = 32
    p_count: int = 6      # LDB anchor count
    i_count: int = 2      # RA anchor count

    def __post_init__(self):
        if self.mode not in ("AI", "LDP", "LDB", "RA"):
            raise InfeasibleGopError(f"unknown mode {self.mode!r}")
        if self.gop_size < 1:
            raise InfeasibleGopError("gop_size must be >= 1")


@dataclass(frozen=True)
class GopEntry:
    display_index: int
    coding_order: int
    frame_type: FrameType
    past_ref: int | None = None
    future_ref: int | None = None


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _hierarchy(spans):
    """Midpoint-split B frames for [a, b] anchor spans, grouped by level."""
    levels: dict[int, list] = {}
    work = [(a, b, 1) for a, b in spans]
    while work:
        a, b, lvl = work.pop(0)
        if b - a <= 1:
            continue
        m = (a + b) // 2
        levels.setdefault(lvl, []).append((m, a, b))
        work.append((a, m, lvl + 1))
        work.append((m, b, lvl + 1))
    return levels


def schedule(cfg: GopConfig) -> list[GopEntry]:
    n = cfg.gop_size
    if cfg.mode == "AI":
        return [GopEntry(i, i, FrameType.I) for i in range(n)]

    if cfg.mode == "LDP":
        entries = [GopEntry(0, 0, FrameType.I)]
        entries += [GopEntry(i, i, FrameType.P, past_ref=i - 1) for i in range(1, n)]
        return entries

    if cfg.mode == "LDB":
        if n == 1:
            return [GopEntry(0, 0, FrameType.I)]
        if cfg.p_count < 1 or cfg.p_count >= n:
            raise InfeasibleGopError(
                f"LDB needs 1 <= p_count < gop_size, got p={cfg.p_count}, gop={n}")
        # P anchors end on the last frame so every B has a future reference
        anchors = [0] + [_round_half_up(j * (n - 1) / cfg.p_count)
                         for j in range(1, cfg.p_count + 1)]
        entries = [GopEntry(0, 0, FrameType.I)]
        for j in range(1, len(anchors)):
            entries.append(GopEntry(anchors[j], j, FrameType.P, past_ref=anchors[j - 1]))
        order = len(anchors)
        levels = _hierarchy(list(zip(anchors[:-1], anchors[1:])))
        for lvl in sorted(levels):
            for m, a, b in sorted(levels[lvl]):
                entries.append(GopEntry(m, order, FrameType.B, past_ref=a, future_ref=b))
                order += 1
        return entries

    # RA
    if n == 1:
        return [GopEntry(0, 0, FrameType.I)]
    if cfg.i_count > n:
        raise InfeasibleGopError(f"RA needs i_count <= gop_size, got i={cfg.i_count}, gop={n}")
    if cfg.i_count < 2:
        raise InfeasibleGopError("RA needs i_count >= 2 when gop_size > 1")
    anchors = sorted({_round_half_up(j * (n - 1) / (cfg.i_count - 1))
                      for j in range(cfg.i_count)})
    if len(anchors) != cfg.i_count:
        raise InfeasibleGopError(f"RA anchors collide for i={cfg.i_count}, gop={n}")
    entries = [GopEntry(a, k, FrameType.I) for k, a in enumerate(anchors)]
    order = len(anchors)
    levels = _hierarchy(list(zip(anchors[:-1], anchors[1:])))
    for lvl in sorted(levels):
        for m, a, b in sorted(levels[lvl]):
            entries.append(GopEntry(m, order, FrameType.B, past_ref=a, future_ref=b))
            order += 1
    return entries


def schedule_counts(entries) -> dict:
    out = {FrameType.I: 0, FrameType.P: 0, FrameType.B: 0}
    for e in entries:
        out[e.frame_type] += 1
    return out


def validate_schedule(entries) -> None:
    """Structural checks: coverage, reference arity, topological order."""
    n = len(entries)
    displays = sorted(e.display_index for e in entries)
    if displays != list(range(n)):
        raise InfeasibleGopError("schedule does not cover displays 0..n-1 exactly once")
    orders = sorted(e.coding_order for e in entries)
    if orders != list(range(n)):
        raise InfeasibleGopError("coding orders are not a permutation of 0..n-1")
    coded = set()
    for e in sorted(entries, key=lambda e: e.coding_order):
        refs = [r for r in (e.past_ref, e.future_ref) if r is not None]
        if e.frame_type is FrameType.I and refs:
            raise InfeasibleGopError(f"I frame {e.display_index} has references")
        if e.frame_type is FrameType.P and (e.past_ref is None or e.future_ref is not None):
            raise InfeasibleGopError(f"P frame {e.display_index} needs exactly one past ref")
        if e.frame_type is FrameType.B and (e.past_ref is None or e.future_ref is None):
            raise InfeasibleGopError(f"B frame {e.display_index} needs both refs")
        for r in refs:
            if r not in coded:
                raise InfeasibleGopError(
                    f"frame {e.display_index} references {r} before it is coded")
        coded.add(e.display_index)


def dump_schedule(entries) -> str:
    """One line per entry: 'coding_order display_index type past future'."""
    lines = []
    for e in sorted(entries, key=lambda e: e.coding_order):
        past = "-" if e.past_ref is None else str(e.past_ref)
        fut = "-" if e.future_ref is None else str(e.future_ref)
        lines.append(f"{e.coding_order} {e.display_index} {e.frame_type.value} {past} {fut}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# occlusion-weighted bidirectional fusion
# ---------------------------------------------------------------------------

def _grad_mag(x):
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:, 1:-1, :] = 0.5 * (x[:, 2:, :] - x[:, :-2, :])
    gx[:, :, 1:-1] = 0.5 * (x[:, :, 2:] - x[:, :, :-2])
    return np.sqrt(gx * gx + gy * gy)


def occlusion_estimate(y_prev, y_next, w: stvc.StvcWeights, mode: str = "conv"):
    """Per-element convex weight for blending the two references.

    conv: seeded antisymmetric conv over the concatenation (equal references
    give exactly 0.5 everywhere). analytic: sigmoid of the gradient-magnitude
    difference, for interpretable tests.
    """
    if y_prev.shape != y_next.shape:
        raise ValueError(f"reference dims differ: {y_prev.shape} vs {y_next.shape}")
    if mode == "conv":
        pre = conv2d(np.concatenate([y_prev, y_next], axis=0), w.occl_conv)
        return sigmoid(w.occl_sharpness * pre)
    if mode == "analytic":
        return sigmoid(w.occl_sharpness * (_grad_mag(y_next) - _grad_mag(y_prev)))
    raise ValueError(f"unknown occlusion mode {mode!r}")


def fuse_references(y_prev, y_next, occ):
    if y_prev.shape != y_next.shape or occ.shape != y_prev.shape:
        raise ValueError("fusion operands must share dims")
    return occ * y_prev + (1.0 - occ) * y_next


# ---------------------------------------------------------------------------
# feature buffer
# ---------------------------------------------------------------------------

class FeatureBuffer:
    """Decoded-feature store keyed by display index."""

    def __init__(self):
        self._store: dict[int, np.ndarray] = {}

    def insert(self, display_index: int, feature: np.ndarray) -> None:
        self._store[display_index] = feature

    def get(self, display_index: int) -> np.ndarray:
        try:
            return self._store[display_index]
        except KeyError:
            raise MissingReferenceError(
                f"reference feature {display_index} not in buffer") from None

    def __contains__(self, display_index: int) -> bool:
        return display_index in self._store

    def __len__(self) -> int:
        return len(self._store)


# ---------------------------------------------------------------------------
# per-frame pipeline
# ---------------------------------------------------------------------------

def _select_reference(buffer: FeatureBuffer, entry: GopEntry, w: stvc.StvcWeights):
    if entry.frame_type is FrameType.I:
        return None
    past = buffer.get(entry.past_ref)
    if entry.frame_type is FrameType.P:
        return past
    fut = buffer.get(entry.future_ref)
    occ = occlusion_estimate(past, fut, w)
    return fuse_references(past, fut, occ)


def _initial_state(ref, mask, entry, sched, pred, t_inv, noise_seed, latent_shape):
    if entry.frame_type is FrameType.I:
        return diffusion.intra_noise(latent_shape, noise_seed), sched.t_steps
    return diffusion.invert(ref, mask, t_inv, sched, pred), None


def compress_frame(frame, buffer: FeatureBuffer, entry: GopEntry, lam,
                   weights: stvc.StvcWeights, sched, pred, *, transform,
                   t_inv=None, start_step=None, noise_seed=0, debug=None):
    """Encode one frame; returns (payload, reconstructed frame, decoded feature).

    The decoded feature is inserted into the buffer. start_step defaults to
    the inversion depth for inter frames (noise-level consistency) and to the
    full chain for intra frames.
    """
    y = transform.to_latent(frame)
    t_inv_eff = _effective_t_inv(t_inv, weights, sched)
    ref = _select_reference(buffer, entry, weights)
    bn_shape = stvc.bottleneck_shape(y.shape)
    dist = entropy.context_params(ref, lam, weights, shape=bn_shape)
    symbols = stvc.quantize(stvc.analysis_transform(y, ref, lam, weights))
    payload = entropy.range_encode(symbols, dist)
    y_hat, mask = stvc.decode_feature(symbols, ref, lam, weights, latent_hw=y.shape[1:])
    state, forced_start = _initial_state(ref, mask, entry, sched, pred,
                                         t_inv_eff, noise_seed, y.shape)
    start = forced_start if forced_start is not None else \
        (t_inv_eff if start_step is None else int(start_step))
    y0 = diffusion.denoise_from(state, start, y_hat, sched, pred)
    recon = transform.from_latent(y0)
    buffer.insert(entry.display_index, y_hat)
    if debug is not None:
        debug.update(y=y, ref=ref, symbols=symbols, mask=mask, y0=y0,
                     y_hat=y_hat, start=start, dist=dist)
    return payload, recon, y_hat


def decompress_frame(payload, buffer: FeatureBuffer, entry: GopEntry, lam,
                     weights: stvc.StvcWeights, sched, pred, *, transform,
                     latent_shape, t_inv=None, start_step=None, noise_seed=0):
    """Decode one frame; bit-identical to the encoder's local reconstruction."""
    t_inv_eff = _effective_t_inv(t_inv, weights, sched)
    ref = _select_reference(buffer, entry, weights)
    bn_shape = stvc.bottleneck_shape(latent_shape)
    dist = entropy.context_params(ref, lam, weights, shape=bn_shape)
    symbols = entropy.range_decode(payload, dist, int(np.prod(bn_shape)))
    y_hat, mask = stvc.decode_feature(symbols, ref, lam, weights,
                                      latent_hw=latent_shape[1:])
    state, forced_start = _initial_state(ref, mask, entry, sched, pred,
                                         t_inv_eff, noise_seed, latent_shape)
    start = forced_start if forced_start is not None else \
        (t_inv_eff if start_step is None else int(start_step))
    y0 = diffusion.denoise_from(state, start, y_hat, sched, pred)
    recon = transform.from_latent(y0)
    buffer.insert(entry.display_index, y_hat)
    return recon, y_hat


def _effective_t_inv(t_inv, weights, sched):
    base = sched.t_steps // 2 if t_inv is None else int(t_inv)
    return int(np.clip(base + weights.start_offset, 0, sched.t_steps))


# ---------------------------------------------------------------------------
# sequence drivers (multi-GoP)
# ---------------------------------------------------------------------------

@dataclass
class FrameRecord:
    display_index: int            # global, across GoPs
    frame_type: FrameType
    payload: entropy.Bitpayload


def chunk_config(cfg: GopConfig, size: int) -> GopConfig:
    # tail chunks may be shorter than gop_size; clamp anchor counts to stay feasible
    p = min(cfg.p_count, max(size - 1, 1))
    i = min(max(cfg.i_count, 2), size) if size > 1 else 1
    return GopConfig(mode=cfg.mode, gop_size=size, p_count=p, i_count=i)


def frame_noise_seed(seed: int, display_index: int) -> int:
    return _detrand.mix(seed, 0x1F5EED, display_index)


def encode_sequence(frames, cfg: GopConfig, lam, weights, sched, pred, *,
                    transform, seed=0, t_inv=None, start_step=None):
    """Encode frames GoP by GoP; returns (records in coding order,
    reconstructions in display order, decoded features in display order)."""
    records, recons, feats = [], [None] * len(frames), [None] * len(frames)
    for g0 in range(0, len(frames), cfg.gop_size):
        chunk = frames[g0:g0 + cfg.gop_size]
        entries = schedule(chunk_config(cfg, len(chunk)))
        buffer = FeatureBuffer()
        for e in sorted(entries, key=lambda e: e.coding_order):
            gidx = g0 + e.display_index
            payload, recon, feat = compress_frame(
                chunk[e.display_index], buffer, e, lam, weights, sched, pred,
                transform=transform, t_inv=t_inv, start_step=start_step,
                noise_seed=frame_noise_seed(seed, gidx))
            records.append(FrameRecord(gidx, e.frame_type, payload))
            recons[gidx] = recon
            feats[gidx] = feat
    return records, recons, feats


def decode_sequence(records, n_frames, cfg: GopConfig, lam, weights, sched, pred, *,
                    transform, latent_shape, seed=0, t_inv=None, start_step=None):
    """Decode records produced by encode_sequence (same config and weights)."""
    recons = [None] * n_frames
    rec_by_display = {r.display_index: r for r in records}
    for g0 in range(0, n_frames, cfg.gop_size):
        size = min(cfg.gop_size, n_frames - g0)
        entries = schedule(chunk_config(cfg, size))
        buffer = FeatureBuffer()
        for e in sorted(entries, key=lambda e: e.coding_order):
            gidx = g0 + e.display_index
            rec = rec_by_display[gidx]
            if rec.frame_type != e.frame_type:
                raise InfeasibleGopError(
                    f"frame {gidx}: stored type {rec.frame_type} != schedule {e.frame_type}")
            recon, _ = decompress_frame(
                rec.payload, buffer, e, lam, weights, sched, pred,
                transform=transform, latent_shape=latent_shape,
                t_inv=t_inv, start_step=start_step,
                noise_seed=frame_noise_seed(seed, gidx))
            recons[gidx] = recon
    return recons
