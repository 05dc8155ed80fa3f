"""Staged training: uniform-weight pre-training (BM), two-step
error-weighted fine-tuning (WM), per-cluster head fine-tuning on frozen
shared layers, and column-wise assembling of the specialized heads (AM).

Stage mechanics shared by all stages: mini-batch SGD with momentum and
weight decay, a step learning-rate schedule (multiply by `lr_decay_factor`
every `lr_decay_every` iterations), periodic validation, best-checkpoint
selection by validation mean error, and early stop after
`convergence_patience` checks without improvement. Momentum buffers reset
at every stage boundary.

Head-only stages run the frozen shared layers in infer mode, so features
are precomputed once per dataset and the per-iteration cost is a single
(D+1) x 2n linear update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, normalize_pixels
from .errors import ContractViolation, TrainingDiverged
from .evaluation import error_matrix, evaluate, predict_dataset
from .geometry import ClusterPartition, clusters_for_pattern, \
    interocular_distance
from .loss import (DEFAULT_ALPHA, ErrorProfile, WeightVector,
                   multicenter_weights, perturb_weights, weights_from_errors)
from .network import (NetworkParams, backward_features, build_network,
                      forward_features, freeze_first_six_conv, freeze_shared)
from .optim import sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageConfig:
    max_iterations: int
    initial_lr: float
    lr_decay_factor: float = 0.3
    lr_decay_every: int = 30000
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 0.0005
    convergence_patience: int = 10
    val_check_every: int = 500

    def __post_init__(self):
        if min(self.max_iterations, self.lr_decay_every, self.batch_size,
               self.convergence_patience, self.val_check_every) < 1:
            raise ContractViolation("stage config fields must be positive")
        if not (self.initial_lr > 0 and 0 < self.lr_decay_factor < 1):
            raise ContractViolation("need lr > 0 and decay factor in (0,1)")

    def lr_at(self, iteration: int) -> float:
        return self.initial_lr * self.lr_decay_factor ** (
            iteration // self.lr_decay_every)


def reference_stage_configs() -> dict:
    """Full-scale reference recipe: mini-batch 64, momentum 0.9, weight
    decay 5e-4, lr 0.02 (pre-train) / 0.001 (fine-tune) decayed by 0.3
    every 3e4 iterations, caps 18e4 / 6e4."""
    pre = StageConfig(max_iterations=180000, initial_lr=0.02)
    fine = StageConfig(max_iterations=60000, initial_lr=0.001)
    return {"pretrain": pre, "weighting": fine, "multicenter": fine}


def desk_stage_configs(pretrain_iterations: int = 2000,
                       finetune_iterations: int = 250,
                       head_iterations: int = 3000,
                       batch_size: int = 8) -> dict:
    """Minutes-scale configs, pinned from measured runs on the synthetic
    benchmark.

    The full-scale lr (0.02 at batch 64) diverges at desk batch sizes,
    so the pre-train lr is scaled down to 0.001 and fine-tuning continues
    at the late-schedule 3e-4; the 0.3 decay factor, momentum 0.9, and
    weight decay 5e-4 are kept. Decay intervals shrink with the caps.
    """
    pre = StageConfig(
        max_iterations=pretrain_iterations, initial_lr=0.001,
        lr_decay_every=max(1, (pretrain_iterations * 2) // 5),
        batch_size=batch_size, val_check_every=100)
    fine = StageConfig(
        max_iterations=finetune_iterations, initial_lr=0.0003,
        lr_decay_every=max(1, finetune_iterations // 2),
        batch_size=batch_size, val_check_every=50)
    head = replace(fine, max_iterations=head_iterations,
                   lr_decay_every=max(1, head_iterations // 2),
                   batch_size=max(batch_size, 16), val_check_every=300)
    return {"pretrain": pre, "weighting": fine, "multicenter": head}


@dataclass
class TrainedModels:
    bm: NetworkParams
    wm: NetworkParams
    heads: list           # m specialized (D+1) x 2n matrices, cluster order
    am: NetworkParams
    eps_b: ErrorProfile
    eps_w: ErrorProfile
    partition: ClusterPartition


class _EpochSampler:
    """Shuffled without-replacement batches, reshuffling per epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return out


def _val_mean_error(params: NetworkParams, head_index: int,
                    val: Dataset) -> float:
    preds = predict_dataset(params, val, head_index)
    return float(error_matrix(preds, val).mean())


def validation_errors(params: NetworkParams, head_index: int,
                      val: Dataset, source_model: str = "BM") -> ErrorProfile:
    """Per-landmark mean validation error (fractions)."""
    if len(val) == 0:
        raise ContractViolation("validation set is empty")
    preds = predict_dataset(params, val, head_index)
    return ErrorProfile(error_matrix(preds, val).mean(axis=0), source_model)


def _conv_train(params: NetworkParams, head_index: int, train: Dataset,
                val: Dataset, u: WeightVector, cfg: StageConfig, seed: int,
                stage: str) -> NetworkParams:
    """Mini-batch SGD over all unfrozen blocks; returns the checkpoint
    with the best validation mean error."""
    if len(train) == 0:
        raise ContractViolation(f"{stage}: training set is empty")
    dtype = params.dtype
    images = normalize_pixels(train.images()).astype(dtype)
    gts = train.gt_coords().astype(dtype)
    inv_d2 = np.array([1.0 / interocular_distance(s.shape) ** 2
                       for s in train.samples], dtype=dtype)
    w2 = np.repeat(u.u, 2).astype(dtype)
    rng = np.random.default_rng(seed)
    sampler = _EpochSampler(len(train), cfg.batch_size, rng)
    params.reset_momentum()
    best = params.clone()
    best_err = _val_mean_error(params, head_index, val)
    stall = 0
    for it in range(cfg.max_iterations):
        lr = cfg.lr_at(it)
        idx = sampler.next()
        batch = images[idx]
        x, caches = forward_features(params, batch, "train", want_cache=True)
        head = params.head(head_index)
        preds = x @ head.value
        residual = preds - gts[idx]
        half_inv = 0.5 * inv_d2[idx]
        loss = float(np.mean((residual ** 2 @ w2) * half_inv))
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"{stage}: loss became non-finite at iteration {it} "
                f"(lr {lr:g})")
        grad_preds = (w2 * residual) * (inv_d2[idx] / len(idx))[:, None]
        params.zero_grads()
        head.grad += x.T @ grad_preds
        backward_features(params, caches, grad_preds @ head.value.T)
        for blk in params.blocks.values():
            sgd_step(blk, lr, cfg.momentum, cfg.weight_decay)
        if (it + 1) % cfg.val_check_every == 0 \
                or it + 1 == cfg.max_iterations:
            err = _val_mean_error(params, head_index, val)
            if err < best_err:
                best = params.clone()
                best_err = err
                stall = 0
            else:
                stall += 1
            if stall >= cfg.convergence_patience:
                log.info("%s: early stop at iteration %d (val %.4f)",
                         stage, it + 1, best_err)
                break
    log.info("%s: finished, best val mean error %.4f", stage, best_err)
    return best


def pretrain_bm(train: Dataset, val: Dataset, cfg: StageConfig,
                seed: int = 0, dtype=np.float32,
                feature_channels: int | None = None,
                conv_channels: tuple | None = None) -> NetworkParams:
    """Stage 1: train shared layers plus one head with uniform weights."""
    if train.pattern != val.pattern:
        raise ContractViolation("train/val pattern mismatch")
    _, params = build_network(train.pattern, seed, dtype=dtype,
                              feature_channels=feature_channels,
                              conv_channels=conv_channels)
    u = WeightVector.uniform(train.pattern)
    return _conv_train(params, 0, train, val, u, cfg, seed + 1,
                       "pretrain[BM]")


def weighting_finetune(bm: NetworkParams, train: Dataset, val: Dataset,
                       cfg: StageConfig, seed: int = 0,
                       weight_perturbation: tuple | None = None
                       ) -> tuple[NetworkParams, ErrorProfile]:
    """Stages 2-3: fine-tune with weights proportional to the per-landmark
    validation error of BM; first with the first six conv layers frozen,
    then with everything unfrozen.

    `weight_perturbation` = (delta, seed) applies the +/-delta split to
    the weights before training (robustness study).
    """
    eps_b = validation_errors(bm, 0, val, "BM")
    u = weights_from_errors(eps_b)
    if weight_perturbation is not None:
        delta, pseed = weight_perturbation
        u = perturb_weights(u, delta, pseed)
    wm = bm.clone()
    wm.unfreeze_all()
    freeze_first_six_conv(wm)
    wm = _conv_train(wm, 0, train, val, u, cfg, seed + 2,
                     "weighting[frozen-six]")
    wm.unfreeze_all()
    wm = _conv_train(wm, 0, train, val, u, cfg, seed + 3,
                     "weighting[all]")
    return wm, eps_b


def multicenter_finetune(wm: NetworkParams, cluster_index: int,
                         train: Dataset, val: Dataset, cfg: StageConfig,
                         eps_w: ErrorProfile | None = None,
                         alpha: float = DEFAULT_ALPHA,
                         seed: int = 0) -> np.ndarray:
    """Stage 4 (one cluster): head-only fine-tuning on frozen shared
    layers, emphasizing the cluster by the alpha weight ratio. Returns
    the specialized head matrix.

    The shared layers run in infer mode (their running statistics are
    frozen with them), so features are computed once per dataset.
    """
    partition = clusters_for_pattern(train.pattern)
    if eps_w is None:
        eps_w = validation_errors(wm, 0, val, "WM")
    u = multicenter_weights(cluster_index, eps_w, partition, alpha)
    work = wm.clone()
    work.unfreeze_all()
    freeze_shared(work, 0)

    dtype = work.dtype
    feats, _ = forward_features(
        work, normalize_pixels(train.images()).astype(dtype), "infer")
    val_feats, _ = forward_features(
        work, normalize_pixels(val.images()).astype(dtype), "infer")
    gts = train.gt_coords().astype(dtype)
    inv_d2 = np.array([1.0 / interocular_distance(s.shape) ** 2
                       for s in train.samples], dtype=dtype)
    val_gts = val.gt_coords()
    val_d = np.array([interocular_distance(s.shape) for s in val.samples])
    w2 = np.repeat(u.u, 2).astype(dtype)
    head = work.head(0)
    head.reset_momentum()

    def val_err(w_mat):
        preds = (val_feats @ w_mat).astype(np.float64)
        diff = preds.reshape(len(val), -1, 2) - val_gts.reshape(
            len(val), -1, 2)
        return float((np.hypot(diff[:, :, 0], diff[:, :, 1])
                      / val_d[:, None]).mean())

    rng = np.random.default_rng(seed)
    sampler = _EpochSampler(len(train), cfg.batch_size, rng)
    best_w = head.value.copy()
    best_err = val_err(best_w)
    stall = 0
    for it in range(cfg.max_iterations):
        idx = sampler.next()
        x = feats[idx]
        residual = x @ head.value - gts[idx]
        loss = float(np.mean((residual ** 2 @ w2) * (0.5 * inv_d2[idx])))
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"multicenter[{cluster_index}]: non-finite loss at "
                f"iteration {it}")
        grad_preds = (w2 * residual) * (inv_d2[idx] / len(idx))[:, None]
        head.grad[...] = x.T @ grad_preds
        sgd_step(head, cfg.lr_at(it), cfg.momentum, cfg.weight_decay)
        if (it + 1) % cfg.val_check_every == 0 \
                or it + 1 == cfg.max_iterations:
            err = val_err(head.value)
            if err < best_err:
                best_w = head.value.copy()
                best_err = err
                stall = 0
            else:
                stall += 1
            if stall >= cfg.convergence_patience:
                break
    return best_w


def assemble(heads: list, partition: ClusterPartition) -> np.ndarray:
    """Column-copy assembling: landmark j's two columns come bit-exactly
    from the head that owns j's cluster."""
    if len(heads) != partition.m:
        raise ContractViolation(
            f"need {partition.m} heads, got {len(heads)}")
    first = np.asarray(heads[0])
    for h in heads[1:]:
        if np.asarray(h).shape != first.shape:
            raise ContractViolation("heads must share dims")
    out = np.empty_like(first)
    for head, idx in zip(heads, partition.clusters):
        head = np.asarray(head)
        cols = np.stack([2 * idx, 2 * idx + 1], axis=1).reshape(-1)
        out[:, cols] = head[:, cols]
    return out


def run_full_pipeline(train: Dataset, val: Dataset, cfgs: dict,
                      seed: int = 0, alpha: float = DEFAULT_ALPHA,
                      test: Dataset | None = None, dtype=np.float32,
                      feature_channels: int | None = None,
                      conv_channels: tuple | None = None,
                      dataset_name: str = "synthetic"
                      ) -> tuple[TrainedModels, list]:
    """All stages in order; returns the trained models and report rows
    (one BM/WM/AM row per evaluated dataset)."""
    partition = clusters_for_pattern(train.pattern)
    bm = pretrain_bm(train, val, cfgs["pretrain"], seed=seed, dtype=dtype,
                     feature_channels=feature_channels,
                     conv_channels=conv_channels)
    wm, eps_b = weighting_finetune(bm, train, val, cfgs["weighting"],
                                   seed=seed)
    eps_w = validation_errors(wm, 0, val, "WM")
    heads = [multicenter_finetune(wm, i, train, val, cfgs["multicenter"],
                                  eps_w=eps_w, alpha=alpha, seed=seed + 10 + i)
             for i in range(partition.m)]
    am = wm.clone()
    am.unfreeze_all()
    am.set_head(0, assemble(heads, partition))
    models = TrainedModels(bm, wm, heads, am, eps_b, eps_w, partition)

    rows = []
    datasets = [(dataset_name + "/val", val)]
    if test is not None:
        datasets.append((dataset_name + "/test", test))
    for ds_name, ds in datasets:
        for model_name, params in (("BM", bm), ("WM", wm), ("AM", am)):
            rep = evaluate(params, 0, ds)
            rows.append({"model": model_name, "dataset": ds_name,
                         "mean_error": rep.mean_error,
                         "failure_rate": rep.failure_rate})
    return models, rows


def report_to_csv(rows: list) -> str:
    lines = ["model,dataset,mean_error,failure_rate"]
    lines += [f"{r['model']},{r['dataset']},{r['mean_error']:.2f},"
              f"{r['failure_rate']:.2f}" for r in rows]
    return "\n".join(lines) + "\n"


def perturbation_study(bm: NetworkParams, train: Dataset, val: Dataset,
                       deltas, seeds, cfg: StageConfig) -> list:
    """Re-run the weighting fine-tune with perturbed weights for every
    (delta, seed) cell; rows are {delta, seed, mean_error}."""
    rows = []
    for delta in deltas:
        if delta < 0:
            raise ContractViolation("deltas must be >= 0")
        for seed in seeds:
            wm, _ = weighting_finetune(
                bm, train, val, cfg, seed=seed,
                weight_perturbation=(float(delta), int(seed)))
            rep = evaluate(wm, 0, val)
            rows.append({"delta": float(delta), "seed": int(seed),
                         "mean_error": rep.mean_error})
    return rows


def perturbation_to_csv(rows: list) -> str:
    lines = ["delta,seed,mean_error"]
    lines += [f"{r['delta']:g},{r['seed']},{r['mean_error']:.2f}"
              for r in rows]
    return "\n".join(lines) + "\n"
