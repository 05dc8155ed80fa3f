"""Learnable parameter blocks, the SGD update, and the finite-difference
gradient checker used as the test oracle throughout the suite."""

from __future__ import annotations

import numpy as np

from .errors import TrainingDiverged


class ParamBlock:
    """One learnable array with its gradient, momentum buffer, and freeze bit.

    `value`, `grad`, and `momentum_buf` always share dims and dtype.
    """

    __slots__ = ("value", "grad", "momentum_buf", "frozen")

    def __init__(self, value: np.ndarray, frozen: bool = False):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.momentum_buf = np.zeros_like(self.value)
        self.frozen = frozen

    @property
    def dims(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def reset_momentum(self):
        self.momentum_buf[...] = 0.0

    def copy(self) -> "ParamBlock":
        out = ParamBlock(self.value.copy(), self.frozen)
        out.grad[...] = self.grad
        out.momentum_buf[...] = self.momentum_buf
        return out


def sgd_step(param: ParamBlock, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """Momentum SGD; weight decay folds into the gradient before momentum:

        buf <- momentum*buf + (grad + weight_decay*value)
        value <- value - lr*buf

    Frozen blocks are skipped silently. Non-finite gradients abort.
    """
    if param.frozen:
        return
    if not np.all(np.isfinite(param.grad)):
        bad = int(np.count_nonzero(~np.isfinite(param.grad)))
        raise TrainingDiverged(
            f"non-finite gradient ({bad}/{param.grad.size} entries) "
            f"in block of dims {param.dims}")
    g = param.grad
    if weight_decay:
        g = g + weight_decay * param.value
    param.momentum_buf *= momentum
    param.momentum_buf += g
    param.value -= lr * param.momentum_buf


def finite_diff_check(loss_fn, params, eps: float,
                      max_coords_per_block: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients with central finite differences.

    `loss_fn(want_grad)` must return the scalar loss; when `want_grad` is
    true it must also write analytic gradients into each block's `.grad`.
    Every coordinate (or a random subset of `max_coords_per_block` per
    block) is perturbed by +/-eps and the relative error
    |a - b| / max(|a|, |b|, 1e-8) is accumulated; the worst one is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    blocks = list(params.values()) if isinstance(params, dict) else list(params)
    loss_fn(want_grad=True)
    analytic = [blk.grad.copy() for blk in blocks]
    worst = 0.0
    for blk, ana in zip(blocks, analytic):
        flat = blk.value.reshape(-1)
        n = flat.size
        if max_coords_per_block is not None and n > max_coords_per_block:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(n, size=max_coords_per_block, replace=False)
        else:
            coords = range(n)
        ana_flat = ana.reshape(-1)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = loss_fn(want_grad=False)
            flat[k] = orig - eps
            f_minus = loss_fn(want_grad=False)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ana_flat[k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
