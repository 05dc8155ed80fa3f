"""Pure-numpy kernels: im2col/col2im with fused zero padding, and 2x2
max pooling.

Reference backend; the compiled `_native` module implements the same four
functions. Arrays are channels-last, C-contiguous, float32 or float64.
"""

import numpy as np

BACKEND = "python"


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int,
           out_h: int, out_w: int) -> np.ndarray:
    """Gather conv patches from an unpadded (B, H, W, C) input, treating
    out-of-range taps as zero.

    Returns a (B*out_h*out_w, kh*kw*C) matrix whose rows are the flattened
    receptive fields, batch-major then row-major over output positions.
    """
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    b, hp, wp, c = x.shape
    sb, sh, sw, sc = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, out_h, out_w, kh, kw, c),
        strides=(sb, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(b * out_h * out_w,
                                                 kh * kw * c)


def col2im_add(cols: np.ndarray, b: int, h: int, w: int, c: int,
               kh: int, kw: int, stride: int, pad: int,
               out_h: int, out_w: int) -> np.ndarray:
    """Scatter-add patch gradients back onto a zeroed (B, H, W, C) input.

    Inverse (adjoint) of `im2col`: overlapping taps accumulate; taps that
    fell in the padding are dropped.
    """
    hp, wp = h + 2 * pad, w + 2 * pad
    grad = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    cols6 = cols.reshape(b, out_h, out_w, kh, kw, c)
    for i in range(kh):
        rows = slice(i, i + stride * (out_h - 1) + 1, stride)
        for j in range(kw):
            colsl = slice(j, j + stride * (out_w - 1) + 1, stride)
            grad[:, rows, colsl, :] += cols6[:, :, :, i, j, :]
    if pad:
        return np.ascontiguousarray(grad[:, pad:-pad, pad:-pad, :])
    return grad


def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pool with ceil rounding on odd extents.

    Ragged edge windows reduce over the cells that exist. Returns the pooled
    map and int32 argmax indices flattened as h*W + w per (B, out, out, C)
    cell, for the backward scatter.
    """
    b, h, w, c = x.shape
    out_h, out_w = (h + 1) // 2, (w + 1) // 2
    ph, pw = out_h * 2, out_w * 2
    if ph != h or pw != w:
        xpad = np.full((b, ph, pw, c), -np.inf, dtype=x.dtype)
        xpad[:, :h, :w, :] = x
    else:
        xpad = x
    win = xpad.reshape(b, out_h, 2, out_w, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = win.reshape(b, out_h, out_w, c, 4)
    local = flat.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    oh = np.arange(out_h, dtype=np.int32)[None, :, None, None]
    ow = np.arange(out_w, dtype=np.int32)[None, None, :, None]
    idx = (oh * 2 + local // 2) * w + (ow * 2 + local % 2)
    return np.ascontiguousarray(out), np.ascontiguousarray(idx)


def maxpool2x2_backward(g: np.ndarray, idx: np.ndarray,
                        h: int, w: int) -> np.ndarray:
    """Route each upstream value to its argmax cell; windows are disjoint."""
    b, out_h, out_w, c = g.shape
    grad = np.zeros((b, h * w, c), dtype=g.dtype)
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    grad[bi, idx, ci] = g
    return grad.reshape(b, h, w, c)
