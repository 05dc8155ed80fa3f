# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: im2col/col2im with fused zero padding, and 2x2 max
pooling.

Drop-in replacement for `facealign.kernels._numpy`; same signatures, same
layouts (channels-last, C-contiguous), float32 and float64 via fused types.
Padding is folded into the gather/scatter loops, so no padded temporaries
are materialized; contiguous channel runs are copied with memcpy.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()

BACKEND = "native"

ctypedef fused real:
    float
    double


def im2col(cnp.ndarray x, int kh, int kw, int stride, int pad,
           int out_h, int out_w):
    x = np.ascontiguousarray(x)
    if x.dtype == np.float32:
        return _im2col[float](x, kh, kw, stride, pad, out_h, out_w)
    return _im2col[double](x, kh, kw, stride, pad, out_h, out_w)


def col2im_add(cnp.ndarray cols, int b, int h, int w, int c,
               int kh, int kw, int stride, int pad, int out_h, int out_w):
    cols = np.ascontiguousarray(cols)
    if cols.dtype == np.float32:
        return _col2im_add[float](cols, b, h, w, c, kh, kw, stride, pad,
                                  out_h, out_w)
    return _col2im_add[double](cols, b, h, w, c, kh, kw, stride, pad,
                               out_h, out_w)


def maxpool2x2_forward(cnp.ndarray x):
    x = np.ascontiguousarray(x)
    if x.dtype == np.float32:
        return _maxpool_fwd[float](x)
    return _maxpool_fwd[double](x)


def maxpool2x2_backward(cnp.ndarray g, cnp.ndarray idx, int h, int w):
    g = np.ascontiguousarray(g)
    idx = np.ascontiguousarray(idx, dtype=np.int32)
    if g.dtype == np.float32:
        return _maxpool_bwd[float](g, idx, h, w)
    return _maxpool_bwd[double](g, idx, h, w)


cdef _im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad,
             int out_h, int out_w):
    cdef int b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t n, oh, ow, i, j, hi, wj, row
    cdef real *dst
    cdef const real *src
    out_np = np.empty((b * out_h * out_w, kh * kw * c),
                      dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] out = out_np
    with nogil:
        for n in range(b):
            for oh in range(out_h):
                for ow in range(out_w):
                    row = (n * out_h + oh) * out_w + ow
                    dst = &out[row, 0]
                    for i in range(kh):
                        hi = oh * stride + i - pad
                        if hi < 0 or hi >= h:
                            memset(dst, 0, kw * c * sizeof(real))
                            dst += kw * c
                            continue
                        for j in range(kw):
                            wj = ow * stride + j - pad
                            if wj < 0 or wj >= w:
                                memset(dst, 0, c * sizeof(real))
                            else:
                                src = &x[n, hi, wj, 0]
                                memcpy(dst, src, c * sizeof(real))
                            dst += c
    return out_np


cdef _col2im_add(real[:, ::1] cols, int b, int h, int w, int c,
                 int kh, int kw, int stride, int pad, int out_h, int out_w):
    cdef Py_ssize_t n, oh, ow, i, j, ch, hi, wj, row
    cdef const real *src
    cdef real *dst
    grad_np = np.zeros((b, h, w, c),
                       dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] grad = grad_np
    with nogil:
        for n in range(b):
            for oh in range(out_h):
                for ow in range(out_w):
                    row = (n * out_h + oh) * out_w + ow
                    src = &cols[row, 0]
                    for i in range(kh):
                        hi = oh * stride + i - pad
                        if hi < 0 or hi >= h:
                            src += kw * c
                            continue
                        for j in range(kw):
                            wj = ow * stride + j - pad
                            if 0 <= wj < w:
                                dst = &grad[n, hi, wj, 0]
                                for ch in range(c):
                                    dst[ch] += src[ch]
                            src += c
    return grad_np


cdef _maxpool_fwd(real[:, :, :, ::1] x):
    cdef int b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int out_h = (h + 1) // 2, out_w = (w + 1) // 2
    cdef Py_ssize_t n, oh, ow, ch, i, j, hi, wi
    cdef int best_h, best_w
    cdef real v, best
    out_np = np.empty((b, out_h, out_w, c),
                      dtype=np.float32 if real is float else np.float64)
    idx_np = np.empty((b, out_h, out_w, c), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_np
    cdef int[:, :, :, ::1] idx = idx_np
    with nogil:
        for n in range(b):
            for oh in range(out_h):
                for ow in range(out_w):
                    for ch in range(c):
                        best = x[n, oh * 2, ow * 2, ch]
                        best_h = <int> (oh * 2)
                        best_w = <int> (ow * 2)
                        for i in range(2):
                            hi = oh * 2 + i
                            if hi >= h:
                                break
                            for j in range(2):
                                wi = ow * 2 + j
                                if wi >= w:
                                    break
                                v = x[n, hi, wi, ch]
                                if v > best:
                                    best = v
                                    best_h = <int> hi
                                    best_w = <int> wi
                        out[n, oh, ow, ch] = best
                        idx[n, oh, ow, ch] = best_h * w + best_w
    return out_np, idx_np


cdef _maxpool_bwd(real[:, :, :, ::1] g, int[:, :, :, ::1] idx, int h, int w):
    cdef int b = g.shape[0], out_h = g.shape[1], out_w = g.shape[2]
    cdef int c = g.shape[3]
    cdef Py_ssize_t n, oh, ow, ch
    cdef int fl
    grad_np = np.zeros((b, h, w, c),
                       dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] grad = grad_np
    with nogil:
        for n in range(b):
            for oh in range(out_h):
                for ow in range(out_w):
                    for ch in range(c):
                        fl = idx[n, oh, ow, ch]
                        grad[n, fl // w, fl % w, ch] += g[n, oh, ow, ch]
    return grad_np
