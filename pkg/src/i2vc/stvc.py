"""Spatio-temporal variable-rate codec (STVC).

Conditional encode/decode of a target latent given an optional reference
latent. The analysis stack is four stages of [3x3 conv + guidance unit] with
stride 2 on stages 2 and 4 (bottleneck at 1/4 latent resolution); synthesis
mirrors it with transposed convs. Each guidance unit computes a sigmoid
importance mask from (feature, reference), gates a residual conv with it, and
scales the result with a rate gain that is strictly positive and non-decreasing
in the rate parameter by construction.

All parameters are generated from a seed: convolutions are initialized as
identity-preserving maps (center tap, 2x2 block mean for stride-2 analysis,
nearest-neighbour for stride-2 synthesis) plus small noise, mask heads as pure
noise. Intra mode substitutes the target for the missing reference in every
concatenation, so one weight set serves I, P and B frames.
"""

from __future__ import annotations

import dataclasses
import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import _detrand
from ._nnops import (
    conv2d,
    conv2d_transpose,
    crop_to,
    relu,
    sigmoid,
    softplus,
    softplus_inv,
)

log = logging.getLogger(__name__)

LAMBDA_MIN = 8.0
LAMBDA_MAX = 512.0
ALPHABET_MAX = 127          # symbols clamp to [-127, 127]
GAIN_TOTAL = 24.0           # nominal amplitude product of the four stage gains at lambda=512
N_STAGES = 4
ENC_STRIDES = (1, 2, 1, 2)
DEC_STRIDES = (2, 1, 2, 1)
_GAIN_HIDDEN = 16


class RateParamError(ValueError):
    pass


class AlphabetError(ValueError):
    pass


def validate_lambda(lam: float) -> float:
    lam = float(lam)
    if not (LAMBDA_MIN <= lam <= LAMBDA_MAX):
        raise RateParamError(f"lambda must be in [{LAMBDA_MIN}, {LAMBDA_MAX}], got {lam}")
    return lam


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GainMlp:
    w1: np.ndarray   # (hidden, c)
    b1: np.ndarray   # (hidden,)
    u1: np.ndarray   # (hidden,) >= 0, loglambda path
    w2: np.ndarray   # (c, hidden) >= 0
    b2: float
    u2: np.ndarray   # (c,) >= 0


@dataclass(frozen=True, eq=False)
class StageParams:
    conv: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    stgu: np.ndarray
    gain: GainMlp


@dataclass(frozen=True, eq=False)
class StvcWeights:
    seed: int
    channels: int
    enc: tuple
    dec: tuple
    ref_conv: tuple
    rec_mask1: np.ndarray
    rec_mask2: np.ndarray
    sigma_conv: np.ndarray
    sigma_base: np.ndarray
    occl_conv: np.ndarray
    # exposed scalars (the harness tuner moves these inside declared boxes)
    gain_exponent: float = 0.75
    gain_bias: float = 0.0
    sigma_scale_intra: float = 1.0
    sigma_scale_inter: float = 1.0
    occl_sharpness: float = 1.0
    start_offset: int = 0

    def with_params(self, **scalars) -> "StvcWeights":
        return dataclasses.replace(self, **scalars)


def _noise(seed, shape, scale):
    return _detrand.normals(seed, shape) * scale


def _ident_conv(seed, cout, cin, mode, src_offset=0, noise=0.0005):
    """3x3 kernel: identity-preserving structure plus seeded noise.

    mode: center (stride 1), blockmean (stride-2 analysis),
    nearest_up (stride-2 transposed synthesis), none (pure noise).
    """
    w = _noise(seed, (cout, cin, 3, 3), noise)
    o = np.arange(min(cout, cin - src_offset))
    if mode == "center":
        w[o, src_offset + o, 1, 1] += 1.0
    elif mode == "blockmean":
        w[o[:, None, None], (src_offset + o)[:, None, None],
          np.array([1, 2])[None, :, None], np.array([1, 2])[None, None, :]] += 0.25
    elif mode == "nearest_up":
        # taps chosen so a stride-2 transposed conv reproduces each source
        # value at all four positions of its upsampled 2x2 block
        w[o[:, None, None], (src_offset + o)[:, None, None],
          np.array([1, 2])[None, :, None], np.array([1, 2])[None, None, :]] += 1.0
    elif mode != "none":
        raise ValueError(mode)
    return w


def _mask_pair(seed, c):
    s1 = 0.5 / np.sqrt(9.0 * 2 * c)
    s2 = 0.5 / np.sqrt(9.0 * c)
    return (_noise(_detrand.mix(seed, 1), (c, 2 * c, 3, 3), s1),
            _noise(_detrand.mix(seed, 2), (c, c, 3, 3), s2))


def _residual_conv(seed, c):
    # gated refinement path; kept small so the select step stays near-invertible
    # and localized content does not smear across the frame
    return _noise(seed, (c, c, 3, 3), 0.05 / np.sqrt(9.0 * c))


def _gain_mlp(seed, c):
    b2 = softplus_inv(GAIN_TOTAL ** (1.0 / N_STAGES))
    return GainMlp(
        w1=_noise(_detrand.mix(seed, 1), (_GAIN_HIDDEN, c), 0.05),
        b1=np.zeros(_GAIN_HIDDEN),
        u1=np.abs(_noise(_detrand.mix(seed, 2), (_GAIN_HIDDEN,), 0.002)),
        w2=np.abs(_noise(_detrand.mix(seed, 3), (c, _GAIN_HIDDEN), 0.002)),
        b2=b2,
        u2=np.abs(_noise(_detrand.mix(seed, 4), (c,), 0.002)),
    )


def make_weights(seed: int = 0, channels: int = 48) -> StvcWeights:
    c = channels
    tag = lambda *t: _detrand.mix(seed, 0x57, *t)

    enc_modes = ("center", "blockmean", "center", "blockmean")
    enc = []
    for k in range(N_STAGES):
        cin = 2 * c if k == 0 else c
        m1, m2 = _mask_pair(tag(2, k), c)
        enc.append(StageParams(
            conv=_ident_conv(tag(1, k), c, cin, enc_modes[k],
                             src_offset=c if k == 0 else 0),
            mask1=m1,
            mask2=m2,
            stgu=_residual_conv(tag(3, k), c),
            gain=_gain_mlp(tag(4, k), c),
        ))

    dec_modes = ("nearest_up", "center", "nearest_up", "center")
    dec = []
    for k in range(N_STAGES):
        m1, m2 = _mask_pair(tag(6, k), c)
        dec.append(StageParams(
            conv=_ident_conv(tag(5, k), c, c, dec_modes[k]),
            mask1=m1,
            mask2=m2,
            stgu=_residual_conv(tag(7, k), c),
            gain=_gain_mlp(tag(8, k), c),
        ))

    ref_modes = ("center", "blockmean", "center", "blockmean")
    ref_conv = tuple(
        _ident_conv(tag(9, k), c, c, ref_modes[k]) for k in range(N_STAGES)
    )

    rm1, rm2 = _mask_pair(tag(10), c)

    occl_half = _noise(tag(11), (c, c, 3, 3), 0.35 / np.sqrt(9.0 * c))
    occl_conv = np.concatenate([occl_half, -occl_half], axis=1)

    return StvcWeights(
        seed=seed,
        channels=c,
        enc=tuple(enc),
        dec=tuple(dec),
        ref_conv=ref_conv,
        rec_mask1=rm1,
        rec_mask2=rm2,
        sigma_conv=_noise(tag(12), (c, c, 3, 3), 0.25 / np.sqrt(9.0 * c)),
        sigma_base=0.30 * (0.75 + 0.5 * np.abs(_detrand.normals(tag(13), (c,)))),
        occl_conv=occl_conv,
    )


# ---------------------------------------------------------------------------
# gain
# ---------------------------------------------------------------------------

def stage_gain(omega: np.ndarray, lam: float, mlp: GainMlp, w: StvcWeights) -> np.ndarray:
    """Per-element rate gain, strictly positive, non-decreasing in lambda.

    Monotonicity is structural: the loglambda paths (u1, u2) and the second
    layer (w2) are non-negative, relu/softplus are non-decreasing, and the
    final power factor has a non-negative exponent.
    """
    loglam = np.log(lam)
    h = relu(np.tensordot(mlp.w1, omega, axes=([1], [0]))
             + (mlp.b1 + mlp.u1 * loglam)[:, None, None])
    pre = (np.tensordot(mlp.w2, h, axes=([1], [0]))
           + (mlp.u2 * loglam)[:, None, None] + mlp.b2 + w.gain_bias)
    return softplus(pre) * (lam / LAMBDA_MAX) ** (w.gain_exponent / N_STAGES)


def _nominal_stage_gain(lam: float, w: StvcWeights) -> float:
    # scalar amplitude of one stage gain; the omega-dependent wobble is tiny
    # because w2/u1/u2 are generated small
    b2 = softplus_inv(GAIN_TOTAL ** (1.0 / N_STAGES)) + w.gain_bias
    return float(softplus(np.float64(b2)) * (lam / LAMBDA_MAX) ** (w.gain_exponent / N_STAGES))


def gain_amplitude(lam: float, w: StvcWeights) -> float:
    """Nominal end-to-end analysis amplification at rate lambda."""
    return _nominal_stage_gain(lam, w) ** N_STAGES


# ---------------------------------------------------------------------------
# guidance unit and stacks
# ---------------------------------------------------------------------------

def _unit_mask(f_norm, r, p):
    a = relu(conv2d(np.concatenate([f_norm, r], axis=0), p.mask1))
    return sigmoid(conv2d(a, p.mask2))


def _apply_unit(f, r, lam, p, w, norm_scale, invert_gain, mask_override=None):
    """One guidance unit: mask, gated residual conv, rate gain.

    norm_scale removes the nominal accumulated amplification from the mask
    input so importance masks are (nearly) rate-independent; the gated path
    and the gain act on the unnormalized feature.
    """
    if mask_override is None:
        omega = _unit_mask(f / norm_scale, r, p)
    else:
        omega = np.broadcast_to(np.asarray(mask_override, dtype=np.float64), f.shape)
    selected = f + omega * conv2d(f, p.stgu)
    g = stage_gain(omega, lam, p.gain, w)
    out = selected / g if invert_gain else selected * g
    return out, omega


def stgu_forward(f, ref, lam, w: StvcWeights, stage: int = 0, mask_override=None):
    """Single spatio-temporal guidance unit at the feature's own resolution.

    ref=None selects intra mode: the mask is computed from the feature alone.
    """
    lam = validate_lambda(lam)
    r = f if ref is None else ref
    if r.shape != f.shape:
        raise ValueError(f"reference dims {r.shape} != feature dims {f.shape}")
    return _apply_unit(f, r, lam, w.enc[stage], w, 1.0, False, mask_override)


def reference_pyramid(src: np.ndarray, w: StvcWeights) -> list:
    """Reference features at the four stage resolutions (plus the input)."""
    pyr = [src]
    f = src
    for k in range(N_STAGES):
        f = conv2d(f, w.ref_conv[k], stride=ENC_STRIDES[k])
        pyr.append(f)
    return pyr


def _stage_dims(h: int, wd: int):
    dims = [(h, wd)]
    for s in ENC_STRIDES:
        ph, pw = dims[-1]
        dims.append(((ph + s - 1) // s, (pw + s - 1) // s))
    return dims  # dims[k] = spatial dims after stage k; dims[4] = bottleneck


def bottleneck_shape(latent_shape):
    c, h, wd = latent_shape
    d = _stage_dims(h, wd)[-1]
    return (c, d[0], d[1])


def analysis_transform(y, ref, lam, w: StvcWeights) -> np.ndarray:
    """Four-stage conditional analysis; returns the pre-quantization bottleneck."""
    lam = validate_lambda(lam)
    src = y if ref is None else ref
    if src.shape != y.shape:
        raise ValueError(f"reference dims {src.shape} != target dims {y.shape}")
    pyr = reference_pyramid(src, w)
    g1 = _nominal_stage_gain(lam, w)
    f = np.concatenate([src, y], axis=0)
    for k in range(N_STAGES):
        f = conv2d(f, w.enc[k].conv, stride=ENC_STRIDES[k])
        f, _ = _apply_unit(f, pyr[k + 1], lam, w.enc[k], w, g1 ** k, False)
    return f


def quantize(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, saturate to the [-127, 127] alphabet."""
    r = np.sign(x) * np.floor(np.abs(x) + 0.5)
    n_over = int(np.count_nonzero(np.abs(r) > ALPHABET_MAX))
    if n_over:
        log.warning("quantize: %d symbols clamped to the alphabet", n_over)
    return np.clip(r, -ALPHABET_MAX, ALPHABET_MAX).astype(np.int32)


def recompute_mask(ref, y_hat, w: StvcWeights) -> np.ndarray:
    """Importance mask both sides can compute (from the reference and the
    reconstruction); intra mode uses the reconstruction alone."""
    r = y_hat if ref is None else ref
    a = relu(conv2d(np.concatenate([r, y_hat], axis=0), w.rec_mask1))
    return sigmoid(conv2d(a, w.rec_mask2))


def encode_feature(y, ref, lam, w: StvcWeights):
    """Conditional encode: returns (symbols, mask).

    The returned mask is the decoder-recomputable one (computed after local
    reconstruction), so everything downstream that depends on it stays in
    lockstep between encoder and decoder.
    """
    symbols = quantize(analysis_transform(y, ref, lam, w))
    _, mask = decode_feature(symbols, ref, lam, w, latent_hw=y.shape[1:])
    return symbols, mask


def decode_feature(symbols, ref, lam, w: StvcWeights, latent_hw=None):
    """Conditional decode: returns (reconstructed latent, recomputed mask).

    latent_hw pins the output spatial dims; it is required in intra mode when
    they are not recoverable by exact doubling of the bottleneck dims.
    """
    lam = validate_lambda(lam)
    if np.abs(symbols).max(initial=0) > ALPHABET_MAX:
        raise AlphabetError("symbols outside the [-127, 127] alphabet")
    f = symbols.astype(np.float64)
    c = w.channels
    if f.shape[0] != c:
        raise ValueError(f"symbols have {f.shape[0]} channels, expected {c}")
    if ref is not None:
        pyr = reference_pyramid(ref, w)
        # synthesis stage k runs at the resolution of analysis stage (3 - k)
        refs = [pyr[3], pyr[2], pyr[1], pyr[0]]
        latent_hw = ref.shape[1:]
    else:
        refs = [None] * N_STAGES
    g1 = _nominal_stage_gain(lam, w)
    targets = _synthesis_dims(f.shape[1], f.shape[2], latent_hw)
    for k in range(N_STAGES):
        f = conv2d_transpose(f, w.dec[k].conv, stride=DEC_STRIDES[k])
        f = crop_to(f, *targets[k])
        r = f if refs[k] is None else refs[k]
        f, _ = _apply_unit(f, r, lam, w.dec[k], w, g1 ** (N_STAGES - k), True)
    y_hat = f
    return y_hat, recompute_mask(ref, y_hat, w)


def _synthesis_dims(h_bn, w_bn, latent_hw):
    if latent_hw is not None:
        d = _stage_dims(latent_hw[0], latent_hw[1])
        return [d[3], d[2], d[1], d[0]]
    # fall back to exact doubling of the bottleneck dims
    dims = []
    h, wd = h_bn, w_bn
    for k in range(N_STAGES):
        h, wd = h * DEC_STRIDES[k], wd * DEC_STRIDES[k]
        dims.append((h, wd))
    return dims


# ---------------------------------------------------------------------------
# weight snapshot (seed + dims + raw payload) so golden bitstreams stay stable
# ---------------------------------------------------------------------------

WEIGHTS_MAGIC = b"I2VW"
_SCALAR_FIELDS = ("gain_exponent", "gain_bias", "sigma_scale_intra",
                  "sigma_scale_inter", "occl_sharpness", "start_offset")


def _walk_arrays(w: StvcWeights):
    for side, stages in (("enc", w.enc), ("dec", w.dec)):
        for k, p in enumerate(stages):
            yield f"{side}{k}.conv", p.conv
            yield f"{side}{k}.mask1", p.mask1
            yield f"{side}{k}.mask2", p.mask2
            yield f"{side}{k}.stgu", p.stgu
            yield f"{side}{k}.gain.w1", p.gain.w1
            yield f"{side}{k}.gain.b1", p.gain.b1
            yield f"{side}{k}.gain.u1", p.gain.u1
            yield f"{side}{k}.gain.w2", p.gain.w2
            yield f"{side}{k}.gain.u2", p.gain.u2
    for k, a in enumerate(w.ref_conv):
        yield f"ref{k}", a
    yield "rec_mask1", w.rec_mask1
    yield "rec_mask2", w.rec_mask2
    yield "sigma_conv", w.sigma_conv
    yield "sigma_base", w.sigma_base
    yield "occl_conv", w.occl_conv


def save_weights(path, w: StvcWeights) -> None:
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<BQB", 1, w.seed & 0xFFFFFFFFFFFFFFFF, w.channels))
        arrays = list(_walk_arrays(w))
        f.write(struct.pack("<H", len(arrays)))
        for name, a in arrays:
            nb = name.encode()
            f.write(struct.pack("<B", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        f.write(struct.pack("<B", len(_SCALAR_FIELDS)))
        for name in _SCALAR_FIELDS:
            nb = name.encode()
            f.write(struct.pack("<B", len(nb)))
            f.write(nb)
            f.write(struct.pack("<d", float(getattr(w, name))))


def load_weights(path) -> StvcWeights:
    with open(path, "rb") as f:
        if f.read(4) != WEIGHTS_MAGIC:
            raise ValueError(f"{path}: bad weights magic")
        version, seed, channels = struct.unpack("<BQB", f.read(10))
        if version != 1:
            raise ValueError(f"{path}: unsupported weights version {version}")
        (n_arrays,) = struct.unpack("<H", f.read(2))
        arrays = {}
        for _ in range(n_arrays):
            (ln,) = struct.unpack("<B", f.read(1))
            name = f.read(ln).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(dims))
            arrays[name] = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(dims).copy()
        (n_scalars,) = struct.unpack("<B", f.read(1))
        scalars = {}
        for _ in range(n_scalars):
            (ln,) = struct.unpack("<B", f.read(1))
            name = f.read(ln).decode()
            (val,) = struct.unpack("<d", f.read(8))
            scalars[name] = val
    w = make_weights(seed=seed, channels=channels)
    # rebuild from the stored payload (robust even if generation code drifts)
    def stage(side, k):
        return StageParams(
            conv=arrays[f"{side}{k}.conv"],
            mask1=arrays[f"{side}{k}.mask1"],
            mask2=arrays[f"{side}{k}.mask2"],
            stgu=arrays[f"{side}{k}.stgu"],
            gain=GainMlp(
                w1=arrays[f"{side}{k}.gain.w1"],
                b1=arrays[f"{side}{k}.gain.b1"],
                u1=arrays[f"{side}{k}.gain.u1"],
                w2=arrays[f"{side}{k}.gain.w2"],
                b2=softplus_inv(GAIN_TOTAL ** (1.0 / N_STAGES)),
                u2=arrays[f"{side}{k}.gain.u2"],
            ),
        )

    scalars["start_offset"] = int(scalars.get("start_offset", 0))
    return dataclasses.replace(
        w,
        enc=tuple(stage("enc", k) for k in range(N_STAGES)),
        dec=tuple(stage("dec", k) for k in range(N_STAGES)),
        ref_conv=tuple(arrays[f"ref{k}"] for k in range(N_STAGES)),
        rec_mask1=arrays["rec_mask1"],
        rec_mask2=arrays["rec_mask2"],
        sigma_conv=arrays["sigma_conv"],
        sigma_base=arrays["sigma_base"],
        occl_conv=arrays["occl_conv"],
        **scalars,
    )
