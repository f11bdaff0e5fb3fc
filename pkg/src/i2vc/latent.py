"""Pixel <-> latent transform: an exactly invertible 4x orthogonal patch map.

Frames are (H, W, 3) float64 arrays with values in [0, 1] and H, W divisible
by 4. Latents are (c, H/4, W/4) float64. Each non-overlapping 4x4x3 pixel
patch is flattened to a 48-vector and multiplied by a fixed seed-deterministic
orthogonal matrix; with the default c=48 the map is lossless and linear, for
c<48 the first c rows are used (lossy orthonormal projection).
"""

from __future__ import annotations

import struct

import numpy as np

from . import _detrand

PATCH = 4
PATCH_DIM = PATCH * PATCH * 3  # 48
DEFAULT_CHANNELS = PATCH_DIM


class DimensionError(ValueError):
    """Frame dimensions not divisible by the patch size, or mismatched shapes."""


class ChannelMismatchError(ValueError):
    """Latent channel count differs from the transform's configuration."""


def validate_frame(frame: np.ndarray) -> None:
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionError(f"frame must be (H, W, 3), got {frame.shape}")
    h, w, _ = frame.shape
    if h % PATCH or w % PATCH:
        raise DimensionError(f"frame dims must be divisible by {PATCH}, got {h}x{w}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame values must lie in [0, 1]")


class LatentTransform:
    """Seed-deterministic orthogonal patch transform with channel count c."""

    def __init__(self, seed: int = 0, channels: int = DEFAULT_CHANNELS):
        if not 1 <= channels <= PATCH_DIM:
            raise ChannelMismatchError(f"channels must be in [1, {PATCH_DIM}]")
        self.seed = seed
        self.channels = channels
        q = _detrand.orthogonal(_detrand.mix(seed, 0x4C41), PATCH_DIM)
        self._fwd = q[:channels, :]          # (c, 48)
        self._bwd = self._fwd.T.copy()       # (48, c)

    def to_latent(self, frame: np.ndarray) -> np.ndarray:
        validate_frame(frame)
        h, w, _ = frame.shape
        hh, ww = h // PATCH, w // PATCH
        patches = (
            frame.reshape(hh, PATCH, ww, PATCH, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(hh, ww, PATCH_DIM)
        )
        lat = patches @ self._fwd.T
        return np.ascontiguousarray(lat.transpose(2, 0, 1))

    def from_latent(self, latent: np.ndarray) -> np.ndarray:
        self.validate_latent(latent)
        c, hh, ww = latent.shape
        patches = latent.transpose(1, 2, 0) @ self._bwd.T  # (hh, ww, 48)
        frame = (
            patches.reshape(hh, ww, PATCH, PATCH, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(hh * PATCH, ww * PATCH, 3)
        )
        return np.clip(frame, 0.0, 1.0)

    def validate_latent(self, latent: np.ndarray) -> None:
        if latent.ndim != 3:
            raise DimensionError(f"latent must be (c, h, w), got {latent.shape}")
        if latent.shape[0] != self.channels:
            raise ChannelMismatchError(
                f"latent has {latent.shape[0]} channels, transform expects {self.channels}"
            )
        if not np.all(np.isfinite(latent)):
            raise ValueError("latent contains non-finite values")


# ---------------------------------------------------------------------------
# file formats
#
# Frames: raw planar 8-bit RGB, no header: H*W red bytes, then green, then
# blue, rows in C order. Dimensions travel out of band (config or container).
#
# Latent tensors: magic "I2VT", u8 dtype code (0=float64, 1=float32), u8 ndim,
# ndim x u32 dims, then the C-order payload; every multi-byte field is
# little-endian.
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"I2VT"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def write_frame_rgb8(path, frame: np.ndarray) -> None:
    validate_frame(frame)
    u8 = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        for ch in range(3):
            f.write(u8[:, :, ch].tobytes())


def read_frame_rgb8(path, height: int, width: int) -> np.ndarray:
    n = height * width
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != 3 * n:
        raise DimensionError(
            f"{path}: expected {3 * n} bytes for {height}x{width} planar RGB, got {len(raw)}"
        )
    planes = np.frombuffer(raw, dtype=np.uint8).reshape(3, height, width)
    return planes.transpose(1, 2, 0).astype(np.float64) / 255.0


def write_latent(path, latent: np.ndarray) -> None:
    arr = np.ascontiguousarray(latent, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<BB", 0, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_latent(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: bad tensor magic {magic!r}")
        dtype_code, ndim = struct.unpack("<BB", f.read(2))
        if dtype_code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {dtype_code}")
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        payload = f.read()
    arr = np.frombuffer(payload, dtype=_DTYPES[dtype_code])
    if arr.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return arr.reshape(dims).astype(np.float64)
