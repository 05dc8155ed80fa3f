"""Forward and backward passes for every layer type the network uses.

All functions are pure and operate on batched channels-last arrays
(B, H, W, C); thin single-image wrappers accept (H, W, C). Backward
functions compute gradients of sum(upstream * output) with respect to
their arguments, so chaining them implements backpropagation for the
fixed topology without an autodiff graph.

dtype is the caller's choice: float32 for training speed, float64 for
oracle-grade gradient checks. Outputs follow the input dtype.
"""

import numpy as np

from . import kernels
from .errors import ContractViolation, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = m*running + (1-m)*batch


def _as_batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim == rank:
        return x, False
    raise ShapeError(f"expected rank {rank - 1} or {rank} array, got {x.ndim}")


# -------------------------------------------------------------- convolution

def conv2d_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, filters, bias, stride: int = 1, pad: int = 0,
                   return_cache: bool = False):
    """Cross-correlate (B,H,W,Cin) with (kh,kw,Cin,Cout) filters plus bias.

    Zero padding; output spatial extent floor((n + 2p - k)/s) + 1.
    """
    x, squeeze = _as_batched(x, 4)
    filters = np.asarray(filters)
    bias = np.asarray(bias)
    kh, kw, c_in, c_out = filters.shape
    b, h, w, c = x.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels, filters expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    if stride < 1:
        raise ContractViolation("stride must be >= 1")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input")
    out_h = conv2d_out_size(h, kh, stride, pad)
    out_w = conv2d_out_size(w, kw, stride, pad)
    cols = kernels.im2col(x, kh, kw, stride, pad, out_h, out_w)
    wmat = filters.reshape(kh * kw * c_in, c_out)
    out = cols @ wmat + bias
    out = out.reshape(b, out_h, out_w, c_out)
    if squeeze:
        out = out[0]
    if return_cache:
        return out, (cols, x.shape, filters.shape, stride, pad,
                     (out_h, out_w))
    return out


def conv2d_backward_from_cache(upstream, cache, filters,
                               need_input_grad: bool = True):
    """Backward using the im2col matrix cached by the forward pass."""
    cols, x_shape, f_shape, stride, pad, (out_h, out_w) = cache
    kh, kw, c_in, c_out = f_shape
    b, h, w, _ = x_shape
    g2 = upstream.reshape(b * out_h * out_w, c_out)
    grad_bias = g2.sum(axis=0)
    grad_filters = (cols.T @ g2).reshape(kh, kw, c_in, c_out)
    grad_input = None
    if need_input_grad:
        gcols = g2 @ filters.reshape(kh * kw * c_in, c_out).T
        grad_input = kernels.col2im_add(gcols, b, h, w, c_in,
                                        kh, kw, stride, pad, out_h, out_w)
    return grad_input, grad_filters, grad_bias


def conv2d_backward(upstream, x, filters, stride: int = 1, pad: int = 0):
    """Gradients of sum(upstream * conv2d_forward(x, ...)) w.r.t. all args."""
    x, squeeze = _as_batched(x, 4)
    upstream = np.asarray(upstream)
    up, _ = _as_batched(upstream, 4)
    _, cache = conv2d_forward(x, filters, np.zeros(filters.shape[-1], x.dtype),
                              stride, pad, return_cache=True)
    out_h, out_w = cache[5]
    if up.shape != (x.shape[0], out_h, out_w, filters.shape[-1]):
        raise ShapeError(f"upstream shape {upstream.shape} does not match "
                         f"conv output ({out_h}, {out_w}, {filters.shape[-1]})")
    grad_input, grad_filters, grad_bias = conv2d_backward_from_cache(
        up, cache, np.asarray(filters))
    if squeeze:
        grad_input = grad_input[0]
    return grad_input, grad_filters, grad_bias


# ------------------------------------------------------------------ pooling

def maxpool_forward(x):
    """2x2/stride-2 max pool, ceil rounding; ragged edges use available cells.

    Returns (pooled, argmax_indices); indices are flat h*W + w positions
    consumed by `maxpool_backward`.
    """
    x, squeeze = _as_batched(x, 4)
    out, idx = kernels.maxpool2x2_forward(x)
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool_backward(upstream, argmax_indices, input_dims):
    """Route upstream values to their argmax cells; all other cells zero."""
    upstream, squeeze = _as_batched(upstream, 4)
    idx, _ = _as_batched(argmax_indices, 4)
    if len(input_dims) == 3:
        h, w, _ = input_dims
    else:
        _, h, w, _ = input_dims
    if idx.size and (idx.min() < 0 or idx.max() >= h * w):
        raise ShapeError("argmax indices out of bounds for input dims")
    grad = kernels.maxpool2x2_backward(upstream, idx, h, w)
    if squeeze:
        return grad[0]
    return grad


# -------------------------------------------------------------------- relu

def relu_forward(x):
    x = np.asarray(x)
    return np.maximum(x, 0)


def relu_backward(upstream, x):
    """Subgradient 0 at exactly 0; fixed tie rule keeps checks reproducible."""
    return np.where(np.asarray(x) > 0, upstream, 0)


# --------------------------------------------------------------- batch norm

def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      mode: str = "train", eps: float = BN_EPS,
                      momentum: float = BN_MOMENTUM):
    """Per-channel normalization over batch (and spatial) axes.

    Train mode normalizes with biased batch statistics and updates the
    running buffers in place; infer mode reads only the running buffers.
    Returns (out, cache); cache is None in infer mode.
    """
    x = np.asarray(x)
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise ContractViolation("batchnorm train mode needs batch >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)  # biased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
        out = gamma * xhat + beta
        return out, (xhat, inv_std, gamma, axes)
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        out = gamma * ((x - running_mean) * inv_std) + beta
        return out, None
    raise ContractViolation(f"unknown batchnorm mode {mode!r}")


def batchnorm_backward(upstream, cache):
    """Train-mode backward through the batch statistics."""
    xhat, inv_std, gamma, axes = cache
    n = upstream.size // upstream.shape[-1]
    grad_beta = upstream.sum(axis=axes)
    grad_gamma = (upstream * xhat).sum(axis=axes)
    gxhat = upstream * gamma
    grad_x = (inv_std / n) * (n * gxhat
                              - gxhat.sum(axis=axes)
                              - xhat * (gxhat * xhat).sum(axis=axes))
    return grad_x, grad_gamma, grad_beta


# ------------------------------------------------------- global average pool

def global_avg_pool_forward(x):
    """Mean over the spatial axes: (B,H,W,C) -> (B,C)."""
    x, squeeze = _as_batched(x, 4)
    out = x.mean(axis=(1, 2))
    if squeeze:
        return out[0]
    return out


def global_avg_pool_backward(upstream, input_dims):
    """Spread each upstream value uniformly over its H*W source cells."""
    upstream = np.asarray(upstream)
    up, squeeze = _as_batched(upstream, 2)
    if len(input_dims) == 3:
        h, w, c = input_dims
    else:
        _, h, w, c = input_dims
    grad = np.broadcast_to(up[:, None, None, :] / (h * w),
                           (up.shape[0], h, w, c)).copy()
    if squeeze:
        return grad[0]
    return grad


# ------------------------------------------------------------------- linear

def linear_forward(weights, x):
    """Prediction layer: y = W^T x with the leading bias slot x[0] == 1."""
    weights = np.asarray(weights)
    x = np.asarray(x)
    if x.ndim == 1:
        if x[0] != 1.0:
            raise ContractViolation("x[0] must be 1 (bias slot)")
        return weights.T @ x
    if not np.all(x[:, 0] == 1.0):
        raise ContractViolation("x[:, 0] must be 1 (bias slot)")
    return x @ weights


def linear_backward(upstream, weights, x):
    """Gradients (grad_weights, grad_x) for y = W^T x.

    grad_weights is the outer product x g^T; grad_x includes the bias row
    so callers can drop its leading entry.
    """
    weights = np.asarray(weights)
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.ndim == 1:
        grad_w = np.outer(x, upstream)
        grad_x = weights @ upstream
        return grad_w, grad_x
    grad_w = x.T @ upstream
    grad_x = upstream @ weights.T
    return grad_w, grad_x
