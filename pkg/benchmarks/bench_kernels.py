"""Compare the compiled kernel backend against the numpy fallback on the
shapes this network actually runs: each conv layer's im2col/col2im at
training batch size, the three pooling stages, and one full training
iteration end to end.

Usage: python benchmarks/bench_kernels.py [--batch 8] [--repeats 5]
"""

import argparse
import time

import numpy as np

from facealign.kernels import _numpy

try:
    from facealign.kernels import _native
except ImportError:
    _native = None

# (name, H, W, C_in) of every conv input at the training batch size
CONV_SHAPES = [
    ("conv1", 50, 50, 1), ("conv2", 50, 50, 32),
    ("conv3", 25, 25, 32), ("conv4", 25, 25, 64),
    ("conv5", 13, 13, 64), ("conv6", 13, 13, 128),
    ("conv7", 7, 7, 128), ("conv8", 7, 7, 128), ("conv9", 7, 7, 128),
]
POOL_SHAPES = [("pool1", 50, 50, 32), ("pool2", 25, 25, 64),
               ("pool3", 13, 13, 128)]


def timeit(fn, repeats):
    fn()  # warm
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(batch, repeats):
    rng = np.random.default_rng(0)
    backends = [("python", _numpy)]
    if _native is not None:
        backends.append(("native", _native))
    rows = []
    for name, h, w, c in CONV_SHAPES:
        x = rng.standard_normal((batch, h, w, c)).astype(np.float32)
        cols_shape = (batch * h * w, 9 * c)
        cols = rng.standard_normal(cols_shape).astype(np.float32)
        for label, impl in backends:
            t_gather = timeit(lambda: impl.im2col(x, 3, 3, 1, 1, h, w),
                              repeats)
            t_scatter = timeit(
                lambda: impl.col2im_add(cols, batch, h, w, c, 3, 3, 1, 1,
                                        h, w), repeats)
            rows.append((f"{name} im2col", label, t_gather))
            rows.append((f"{name} col2im", label, t_scatter))
    for name, h, w, c in POOL_SHAPES:
        x = rng.standard_normal((batch, h, w, c)).astype(np.float32)
        for label, impl in backends:
            out, idx = impl.maxpool2x2_forward(x)
            t_fwd = timeit(lambda: impl.maxpool2x2_forward(x), repeats)
            t_bwd = timeit(lambda: impl.maxpool2x2_backward(out, idx, h, w),
                           repeats)
            rows.append((f"{name} fwd", label, t_fwd))
            rows.append((f"{name} bwd", label, t_bwd))
    return rows


def bench_train_step(batch, repeats, backend):
    # layers.py resolves kernels.<fn> at call time, so swapping the
    # module attributes redirects the whole network onto one backend
    import facealign.kernels as K
    impl = _numpy if backend == "python" else _native
    saved = (K.im2col, K.col2im_add, K.maxpool2x2_forward,
             K.maxpool2x2_backward)
    K.im2col = impl.im2col
    K.col2im_add = impl.col2im_add
    K.maxpool2x2_forward = impl.maxpool2x2_forward
    K.maxpool2x2_backward = impl.maxpool2x2_backward
    try:
        from facealign.network import (backward_features, build_network,
                                       forward_features)
        from facealign.optim import sgd_step
        rng = np.random.default_rng(1)
        _, params = build_network(5, seed=0)
        imgs = rng.uniform(-1, 1, (batch, 50, 50, 1)).astype(np.float32)

        def step():
            x, caches = forward_features(params, imgs, "train",
                                         want_cache=True)
            params.zero_grads()
            backward_features(params, caches, np.ones_like(x))
            for blk in params.blocks.values():
                sgd_step(blk, 1e-4, 0.9, 5e-4)

        return timeit(step, repeats)
    finally:
        (K.im2col, K.col2im_add, K.maxpool2x2_forward,
         K.maxpool2x2_backward) = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if _native is None:
        print("note: compiled backend not built; showing fallback only")
    rows = bench_kernels(args.batch, args.repeats)
    names = sorted({r[0] for r in rows}, key=lambda n: [r[0] for r in rows].index(n))
    print(f"\nkernel timings, batch={args.batch} (best of "
          f"{args.repeats}, ms)")
    print(f"{'kernel':16s} {'python':>10s} {'native':>10s} {'speedup':>8s}")
    for name in names:
        times = {label: t for key, label, t in rows if key == name}
        py = times["python"] * 1000
        if "native" in times:
            nat = times["native"] * 1000
            print(f"{name:16s} {py:10.2f} {nat:10.2f} {py / nat:7.1f}x")
        else:
            print(f"{name:16s} {py:10.2f} {'-':>10s} {'-':>8s}")

    print(f"\nfull training iteration (standard pattern-5 network, "
          f"batch {args.batch}):")
    t_py = bench_train_step(args.batch, args.repeats, "python")
    print(f"{'python':16s} {t_py * 1000:10.1f} ms")
    if _native is not None:
        t_nat = bench_train_step(args.batch, args.repeats, "native")
        print(f"{'native':16s} {t_nat * 1000:10.1f} ms   "
              f"({t_py / t_nat:.2f}x)")


if __name__ == "__main__":
    main()
