"""Minimal NCHW layer primitives with explicit forward caches and backward passes.

Every op is a pair of pure functions: ``forward(params, x) -> (y, cache)``
and ``backward(params, cache, gy) -> (gx, param_grads)``. Nothing here owns
state, so a built model can serve concurrent forward calls.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray):
    """Same-size convolution, stride 1. w is (C_out, C_in, k, k), k odd."""
    bsz, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    pad = k // 2
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C_in, H, W, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, h * wd, c_in * k * k)
    w_mat = w.reshape(c_out, c_in * k * k)
    y = cols @ w_mat.T + b
    y = y.transpose(0, 2, 1).reshape(bsz, c_out, h, wd)
    return y, (cols, x.shape, k)


def conv2d_backward(w: np.ndarray, cache, gy: np.ndarray):
    cols, x_shape, k = cache
    bsz, c_in, h, wd = x_shape
    c_out = w.shape[0]
    pad = k // 2
    gy_mat = gy.reshape(bsz, c_out, h * wd).transpose(0, 2, 1)
    gb = gy.sum(axis=(0, 2, 3))
    gw = np.tensordot(gy_mat, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    gcols = gy_mat @ w.reshape(c_out, -1)
    # scatter-add the column gradients back onto the padded input grid
    gxp = np.zeros((bsz, c_in, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    gcols = gcols.reshape(bsz, h, wd, c_in, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + h, j : j + wd] += gcols[:, :, i, j]
    gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
    return gx, gw, gb


def conv_transpose2x2_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray):
    """2x2 stride-2 transposed convolution. w is (C_in, C_out, 2, 2)."""
    bsz, c_in, h, wd = x.shape
    c_out = w.shape[1]
    xm = x.transpose(0, 2, 3, 1).reshape(bsz * h * wd, c_in)
    ym = xm @ w.reshape(c_in, c_out * 4)
    y = (
        ym.reshape(bsz, h, wd, c_out, 2, 2)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(bsz, c_out, 2 * h, 2 * wd)
    )
    y += b[:, None, None]
    return y, (xm, x.shape)


def conv_transpose2x2_backward(w: np.ndarray, cache, gy: np.ndarray):
    xm, x_shape = cache
    bsz, c_in, h, wd = x_shape
    c_out = w.shape[1]
    gy_blocks = (
        gy.reshape(bsz, c_out, h, 2, wd, 2)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(bsz * h * wd, c_out * 4)
    )
    gb = gy.sum(axis=(0, 2, 3))
    gw = (xm.T @ gy_blocks).reshape(w.shape)
    gx = (gy_blocks @ w.reshape(c_in, c_out * 4).T).reshape(bsz, h, wd, c_in)
    return gx.transpose(0, 3, 1, 2), gw, gb


def maxpool2x2_forward(x: np.ndarray):
    bsz, c, h, wd = x.shape
    xr = (
        x.reshape(bsz, c, h // 2, 2, wd // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(bsz, c, h // 2, wd // 2, 4)
    )
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2x2_backward(cache, gy: np.ndarray):
    idx, x_shape = cache
    bsz, c, h, wd = x_shape
    gxr = np.zeros((bsz, c, h // 2, wd // 2, 4), dtype=gy.dtype)
    np.put_along_axis(gxr, idx[..., None], gy[..., None], axis=-1)
    return (
        gxr.reshape(bsz, c, h // 2, wd // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(x_shape)
    )


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0)
    return y, x > 0


def relu_backward(cache, gy: np.ndarray):
    return gy * cache
