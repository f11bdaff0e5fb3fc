"""Minimal numpy conv/activation kernels shared by the codec and the predictor.

Layouts: feature maps are (C, H, W) float64; conv weights are (Cout, Cin, kh, kw).
Only 3x3 kernels with "same" padding and strides 1/2 are needed anywhere, so the
transposed conv supports exactly that case (output = input * stride).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """3x3 same-padding correlation, zero bias. Output spatial dims ceil(H/s)."""
    cout, cin, kh, kw = w.shape
    assert x.shape[0] == cin, (x.shape, w.shape)
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[0], win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    out = cols @ w.reshape(cout, cin * kh * kw).T
    return out.T.reshape(cout, ho, wo).copy()


def conv2d_transpose(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """Transposed 3x3 conv with same padding; output spatial dims = input * stride."""
    cout, cin, kh, kw = w.shape
    assert x.shape[0] == cin
    _, h, wd = x.shape
    if stride == 1:
        dil = x
    else:
        dil = np.zeros((cin, (h - 1) * stride + 1, (wd - 1) * stride + 1))
        dil[:, ::stride, ::stride] = x
    # equivalent correlation with the flipped kernel; pad so that the output
    # covers exactly stride*H rows (pad_left = k-1-p, pad_right adds the
    # output_padding needed to complete the last upsampled block)
    pl = kh - 1 - kh // 2
    pr = pl + (stride - 1)
    xp = np.pad(dil, ((0, 0), (pl, pr), (pl, pr)))
    wf = w[:, :, ::-1, ::-1]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw)
    out = cols @ wf.reshape(cout, cin * kh * kw).T
    return out.T.reshape(cout, ho, wo).copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inv(y: float) -> float:
    # inverse of softplus for y > 0
    return float(y + np.log(-np.expm1(-y)))


def box_blur3(x: np.ndarray) -> np.ndarray:
    """Depthwise 3x3 box blur, same padding (edge-replicated)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.mean(axis=(-1, -2))


def blockmean2(x: np.ndarray) -> np.ndarray:
    """2x downsample by block mean over the trailing two axes (crops odd edges)."""
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    s = x.shape[:-2]
    return x.reshape(*s, h // 2, 2, w // 2, 2).mean(axis=(-1, -3))


def crop_to(x: np.ndarray, h: int, w: int) -> np.ndarray:
    return x[..., :h, :w]
