"""The fixed alignment network: four stacks of 3x3/1/1 convolutions (each
followed by batch norm and ReLU), a 2x2 max pool after each of the first
three stacks, global average pooling after the last convolution, and one
or more linear prediction heads over the pooled feature vector.

    input 50x50x1
    conv1 conv2 (32)  pool -> 25x25
    conv3 conv4 (64)  pool -> 13x13
    conv5 conv6 (128) pool -> 7x7
    conv7 conv8 (128) conv9 (D) gap -> D
    feature x = (1, gap outputs) in R^(D+1)
    head.i.W in R^((D+1) x 2n),  prediction = W^T x

The feature width D is 512/512/1024 for the 5/29/68-landmark patterns.
Backward passes are hand-chained over this fixed topology.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ContractViolation, ShapeError
from .geometry import Shape, n_landmarks
from .optim import ParamBlock

INPUT_SIZE = 50
PATTERN_FEATURE_CHANNELS = {5: 512, 29: 512, 68: 1024}
STANDARD_CONV_CHANNELS = (32, 32, 64, 64, 128, 128, 128, 128)  # conv1..conv8
FIRST_SIX_CONV = tuple(f"conv{i}" for i in range(1, 7))


@dataclass(frozen=True)
class LayerDesc:
    kind: str          # conv | bn | relu | pool | gap
    name: str = ""
    channels: int = 0  # conv/bn output channels


@dataclass(frozen=True)
class NetworkSpec:
    n_landmarks: int
    feature_channels: int         # D
    conv_channels: tuple          # 9 output widths, conv1..conv9
    layer_plan: tuple             # LayerDesc sequence ending in gap

    @classmethod
    def build(cls, pattern: int, feature_channels: int | None = None,
              conv_channels: tuple | None = None) -> "NetworkSpec":
        n = n_landmarks(pattern)
        d = feature_channels or PATTERN_FEATURE_CHANNELS[pattern]
        trunk = tuple(conv_channels) if conv_channels else STANDARD_CONV_CHANNELS
        if len(trunk) != 8:
            raise ContractViolation("conv_channels must list conv1..conv8")
        widths = trunk + (d,)
        plan = []
        idx = 1
        for stack in range(4):
            stack_convs = 3 if stack == 3 else 2
            for _ in range(stack_convs):
                plan.append(LayerDesc("conv", f"conv{idx}", widths[idx - 1]))
                plan.append(LayerDesc("bn", f"bn{idx}", widths[idx - 1]))
                plan.append(LayerDesc("relu"))
                idx += 1
            if stack < 3:
                plan.append(LayerDesc("pool"))
        plan.append(LayerDesc("gap"))
        spec = cls(n, d, widths, tuple(plan))
        spec.validate()
        return spec

    def validate(self) -> None:
        """Structural invariants of the fixed topology."""
        pools = [i for i, l in enumerate(self.layer_plan) if l.kind == "pool"]
        if len(pools) != 3:
            raise ContractViolation("plan must contain exactly three pools")
        convs = [l for l in self.layer_plan if l.kind == "conv"]
        if len(convs) != 9 or convs[-1].channels != self.feature_channels:
            raise ContractViolation("plan must end with a D-channel conv")
        for p in pools:
            kinds = [l.kind for l in self.layer_plan[p - 6:p]]
            if kinds != ["conv", "bn", "relu", "conv", "bn", "relu"]:
                raise ContractViolation("each pool must follow two convs")
        if self.layer_plan[-1].kind != "gap":
            raise ContractViolation("plan must end with global average pool")

    @property
    def prediction_width(self) -> int:
        return 2 * self.n_landmarks


class NetworkParams:
    """All learnable blocks plus batch-norm running statistics.

    `blocks` maps names (conv*.weight/.bias, bn*.gamma/.beta, head.<i>.W)
    to ParamBlocks; `stats` maps bn*.running_mean/.running_var to plain
    arrays updated only by train-mode forward passes.
    """

    def __init__(self, spec: NetworkSpec, blocks: dict, stats: dict,
                 dtype=np.float32):
        self.spec = spec
        self.blocks = blocks
        self.stats = stats
        self.dtype = np.dtype(dtype)

    # ------------------------------------------------------------- heads

    def head_indices(self) -> list:
        out = []
        for name in self.blocks:
            if name.startswith("head."):
                out.append(int(name.split(".")[1]))
        return sorted(out)

    def head(self, index: int) -> ParamBlock:
        name = f"head.{index}.W"
        if name not in self.blocks:
            raise ContractViolation(f"no prediction head {index}")
        return self.blocks[name]

    def set_head(self, index: int, value: np.ndarray) -> None:
        expected = (self.spec.feature_channels + 1, self.spec.prediction_width)
        if value.shape != expected:
            raise ShapeError(f"head must have dims {expected}, "
                             f"got {value.shape}")
        self.blocks[f"head.{index}.W"] = ParamBlock(
            np.asarray(value, dtype=self.dtype))

    # ----------------------------------------------------------- freezing

    def set_frozen(self, names, frozen: bool) -> None:
        for name in names:
            if name not in self.blocks:
                raise ContractViolation(f"unknown block {name!r}")
            self.blocks[name].frozen = frozen

    def unfreeze_all(self) -> None:
        for blk in self.blocks.values():
            blk.frozen = False

    def trainable_names(self) -> list:
        return [n for n, b in self.blocks.items() if not b.frozen]

    # ---------------------------------------------------------- utilities

    def zero_grads(self) -> None:
        for blk in self.blocks.values():
            blk.zero_grad()

    def reset_momentum(self) -> None:
        for blk in self.blocks.values():
            blk.reset_momentum()

    def clone(self) -> "NetworkParams":
        blocks = {n: b.copy() for n, b in self.blocks.items()}
        stats = {n: s.copy() for n, s in self.stats.items()}
        return NetworkParams(self.spec, blocks, stats, self.dtype)

    def digest(self, names=None, include_stats: bool = False) -> str:
        """SHA-256 over the raw bytes of the named blocks (sorted order)."""
        h = hashlib.sha256()
        for name in sorted(names if names is not None else self.blocks):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.blocks[name].value).tobytes())
        if include_stats:
            for name in sorted(self.stats):
                h.update(name.encode())
                h.update(np.ascontiguousarray(self.stats[name]).tobytes())
        return h.hexdigest()

    def shared_names(self) -> list:
        return [n for n in self.blocks if not n.startswith("head.")]


def build_network(pattern: int, seed: int, dtype=np.float32,
                  feature_channels: int | None = None,
                  conv_channels: tuple | None = None
                  ) -> tuple[NetworkSpec, NetworkParams]:
    """Construct the network with deterministic seeded initialization.

    Conv and head weights draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    biases start at zero, batch-norm at identity (gamma 1, beta 0,
    running mean 0, running variance 1).

    `feature_channels`/`conv_channels` override the standard widths for
    reduced desk-scale experiments; defaults follow the labeling pattern.
    """
    spec = NetworkSpec.build(pattern, feature_channels, conv_channels)
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    blocks: dict[str, ParamBlock] = {}
    stats: dict[str, np.ndarray] = {}
    c_in = 1
    for desc in spec.layer_plan:
        if desc.kind == "conv":
            fan_in = 3 * 3 * c_in
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, (3, 3, c_in, desc.channels))
            blocks[f"{desc.name}.weight"] = ParamBlock(w.astype(dtype))
            blocks[f"{desc.name}.bias"] = ParamBlock(
                np.zeros(desc.channels, dtype))
            c_in = desc.channels
        elif desc.kind == "bn":
            blocks[f"{desc.name}.gamma"] = ParamBlock(
                np.ones(desc.channels, dtype))
            blocks[f"{desc.name}.beta"] = ParamBlock(
                np.zeros(desc.channels, dtype))
            stats[f"{desc.name}.running_mean"] = np.zeros(desc.channels, dtype)
            stats[f"{desc.name}.running_var"] = np.ones(desc.channels, dtype)
    d1 = spec.feature_channels + 1
    bound = 1.0 / np.sqrt(d1)
    w = rng.uniform(-bound, bound, (d1, spec.prediction_width))
    blocks["head.0.W"] = ParamBlock(w.astype(dtype))
    return spec, NetworkParams(spec, blocks, stats, dtype)


# ------------------------------------------------------------ forward pass

def forward_features(params: NetworkParams, images: np.ndarray,
                     mode: str = "infer", want_cache: bool = False):
    """Run the shared layers on a (B, 50, 50, 1) batch.

    Returns (x, caches) where x is (B, D+1) with x[:, 0] == 1. Train mode
    uses batch statistics and updates the running buffers; infer mode is
    a pure function of the parameters.
    """
    a = np.asarray(images, dtype=params.dtype)
    if a.ndim != 4 or a.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 1):
        raise ShapeError(
            f"expected (B, {INPUT_SIZE}, {INPUT_SIZE}, 1) batch, "
            f"got {a.shape}")
    caches = [] if want_cache else None
    for desc in params.spec.layer_plan:
        if desc.kind == "conv":
            w = params.blocks[f"{desc.name}.weight"].value
            b = params.blocks[f"{desc.name}.bias"].value
            a, cache = layers.conv2d_forward(a, w, b, 1, 1, return_cache=True)
            if want_cache:
                caches.append(("conv", desc.name, cache))
        elif desc.kind == "bn":
            out, cache = layers.batchnorm_forward(
                a,
                params.blocks[f"{desc.name}.gamma"].value,
                params.blocks[f"{desc.name}.beta"].value,
                params.stats[f"{desc.name}.running_mean"],
                params.stats[f"{desc.name}.running_var"],
                mode)
            if want_cache:
                caches.append(("bn", desc.name, cache))
            a = out
        elif desc.kind == "relu":
            if want_cache:
                caches.append(("relu", "", a))
            a = layers.relu_forward(a)
        elif desc.kind == "pool":
            in_shape = a.shape
            a, idx = layers.maxpool_forward(a)
            if want_cache:
                caches.append(("pool", "", (idx, in_shape)))
        elif desc.kind == "gap":
            in_shape = a.shape
            a = layers.global_avg_pool_forward(a)
            if want_cache:
                caches.append(("gap", "", in_shape))
    ones = np.ones((a.shape[0], 1), dtype=a.dtype)
    return np.concatenate([ones, a], axis=1), caches


def backward_features(params: NetworkParams, caches, grad_x) -> None:
    """Accumulate gradients of the shared layers from d(loss)/d(x).

    `grad_x` is (B, D+1); the bias column's gradient is discarded. The
    walk stops once every remaining lower layer is frozen, since no
    gradient consumer exists below that point.
    """
    grad = np.asarray(grad_x)[:, 1:]
    plan = params.spec.layer_plan
    # deepest plan index whose block still trains
    lowest = len(plan)
    for i, desc in enumerate(plan):
        if desc.kind == "conv":
            if not params.blocks[f"{desc.name}.weight"].frozen \
                    or not params.blocks[f"{desc.name}.bias"].frozen:
                lowest = min(lowest, i)
        elif desc.kind == "bn":
            if not params.blocks[f"{desc.name}.gamma"].frozen \
                    or not params.blocks[f"{desc.name}.beta"].frozen:
                lowest = min(lowest, i)
    for i in range(len(plan) - 1, -1, -1):
        if i < lowest:
            break
        kind, name, cache = caches[i]
        if kind == "gap":
            grad = layers.global_avg_pool_backward(grad, cache)
        elif kind == "pool":
            idx, in_shape = cache
            grad = layers.maxpool_backward(grad, idx, in_shape)
        elif kind == "relu":
            grad = layers.relu_backward(grad, cache)
        elif kind == "bn":
            grad, g_gamma, g_beta = layers.batchnorm_backward(grad, cache)
            params.blocks[f"{name}.gamma"].grad += g_gamma
            params.blocks[f"{name}.beta"].grad += g_beta
        elif kind == "conv":
            gi, gw, gb = layers.conv2d_backward_from_cache(
                grad, cache, params.blocks[f"{name}.weight"].value,
                need_input_grad=(i > lowest))
            params.blocks[f"{name}.weight"].grad += gw
            params.blocks[f"{name}.bias"].grad += gb
            grad = gi


def extract_features(params: NetworkParams, image: np.ndarray,
                     mode: str = "infer") -> np.ndarray:
    """Feature vector x in R^(D+1) for one 50x50x1 image; x[0] == 1."""
    image = np.asarray(image)
    if image.shape != (INPUT_SIZE, INPUT_SIZE, 1):
        raise ShapeError(f"expected ({INPUT_SIZE}, {INPUT_SIZE}, 1) image, "
                         f"got {image.shape}")
    x, _ = forward_features(params, image[None], mode)
    return x[0]


def predict_shape(params: NetworkParams, head_index: int,
                  x: np.ndarray) -> Shape:
    """Interleaved landmark prediction W^T x from one feature vector."""
    w = params.head(head_index)
    return Shape(np.asarray(layers.linear_forward(w.value, x),
                            dtype=np.float64),
                 params.spec.n_landmarks)


def predict_batch(params: NetworkParams, images: np.ndarray,
                  head_index: int = 0, mode: str = "infer") -> np.ndarray:
    """(B, 2n) predictions for a batch of images."""
    x, _ = forward_features(params, images, mode)
    return layers.linear_forward(params.head(head_index).value, x)


# ----------------------------------------------------------- param counts

def count_params(params: NetworkParams, segment: str = "all") -> int:
    """Exact scalar parameter counts.

    segment="all" counts every learnable block (running statistics are
    not learnable and are excluded). segment="feature_head_segment"
    counts the final feature stage - the D-channel conv plus its batch
    norm - tallying (3*3*128+1)D for the conv and 2D + 2D for the
    normalization moments and scale/shift, i.e. 1157D at the standard
    widths; the moment buffers are part of this stage's bookkeeping even
    though only the conv and scale/shift entries train.
    """
    if segment == "all":
        return int(sum(b.value.size for b in params.blocks.values()))
    if segment == "feature_head_segment":
        total = (params.blocks["conv9.weight"].value.size
                 + params.blocks["conv9.bias"].value.size
                 + params.blocks["bn9.gamma"].value.size
                 + params.blocks["bn9.beta"].value.size
                 + params.stats["bn9.running_mean"].size
                 + params.stats["bn9.running_var"].size)
        return int(total)
    raise ContractViolation(f"unknown segment {segment!r}")


# -------------------------------------------------------------- freezing

def freeze_first_six_conv(params: NetworkParams) -> frozenset:
    """Freeze the first three stacks (conv1..conv6 and their batch-norm
    scale/shift); returns the frozen block names."""
    names = []
    for i, conv in enumerate(FIRST_SIX_CONV, start=1):
        names += [f"{conv}.weight", f"{conv}.bias",
                  f"bn{i}.gamma", f"bn{i}.beta"]
    params.set_frozen(names, True)
    return frozenset(names)


def freeze_shared(params: NetworkParams, head_index: int = 0) -> frozenset:
    """Freeze everything except the active prediction head."""
    keep = f"head.{head_index}.W"
    params.head(head_index)
    names = [n for n in params.blocks if n != keep]
    params.set_frozen(names, True)
    params.blocks[keep].frozen = False
    return frozenset(names)
