"""Metrics: inter-ocular normalized mean error, failure rate, cumulative
error distribution curves, single-image inference speed, and the
occlusion comparison table."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .augment import occlude_cluster
from .data import Dataset, normalize_pixels
from .errors import ContractViolation
from .geometry import clusters_for_pattern, interocular_distance
from .network import NetworkParams, forward_features

FAILURE_THRESHOLD = 0.10  # strict: a sample fails when error > 10%
DEFAULT_CED_THRESHOLDS = np.round(np.arange(0.0, 0.2001, 0.002), 6)


@dataclass(frozen=True)
class EvalReport:
    per_sample_mean_errors: np.ndarray  # fractions of inter-ocular distance
    mean_error: float                   # percent
    failure_rate: float                 # percent
    n_samples: int


@dataclass(frozen=True)
class CEDCurve:
    thresholds: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        f = np.asarray(self.fractions, dtype=np.float64)
        if np.any(np.diff(t) <= 0):
            raise ContractViolation("thresholds must be strictly ascending")
        if np.any(np.diff(f) < 0):
            raise ContractViolation("fractions must be non-decreasing")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "fractions", f)


def predict_dataset(params: NetworkParams, ds: Dataset, head_index: int = 0,
                    chunk: int = 16) -> np.ndarray:
    """(N, 2n) infer-mode predictions over a dataset."""
    images = normalize_pixels(ds.images()).astype(params.dtype)
    w = params.head(head_index).value
    preds = []
    for start in range(0, len(ds), chunk):
        x, _ = forward_features(params, images[start:start + chunk], "infer")
        preds.append(x @ w)
    return np.concatenate(preds, axis=0).astype(np.float64)


def error_matrix(preds: np.ndarray, ds: Dataset) -> np.ndarray:
    """(N, n) per-landmark errors normalized by each sample's ground-truth
    inter-ocular distance."""
    gts = ds.gt_coords()
    dists = np.array([interocular_distance(s.shape) for s in ds.samples])
    diff = preds.reshape(len(ds), -1, 2) - gts.reshape(len(ds), -1, 2)
    return np.hypot(diff[:, :, 0], diff[:, :, 1]) / dists[:, None]


def report_from_errors(per_sample: np.ndarray) -> EvalReport:
    per_sample = np.asarray(per_sample, dtype=np.float64)
    if per_sample.size == 0:
        raise ContractViolation("cannot evaluate an empty dataset")
    # strict > threshold fails; written as the complement of the <= count
    # so the CED identity failure == 100*(1 - CED(0.10)) is float-exact
    within = float((per_sample <= FAILURE_THRESHOLD).mean())
    return EvalReport(per_sample,
                      float(per_sample.mean() * 100.0),
                      100.0 * (1.0 - within),
                      int(per_sample.size))


def evaluate(params: NetworkParams, head_index: int,
             test: Dataset) -> EvalReport:
    """Mean error (%) and failure rate (%) of one prediction head."""
    if len(test) == 0:
        raise ContractViolation("cannot evaluate an empty dataset")
    preds = predict_dataset(params, test, head_index)
    return report_from_errors(error_matrix(preds, test).mean(axis=1))


def ced_curve(per_sample_mean_errors,
              thresholds=DEFAULT_CED_THRESHOLDS) -> CEDCurve:
    """Fraction of samples with error <= t for each threshold t."""
    errors = np.asarray(per_sample_mean_errors, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    fractions = (errors[None, :] <= t[:, None]).mean(axis=1)
    return CEDCurve(t, fractions)


def ced_to_csv(curve: CEDCurve) -> str:
    lines = ["threshold,fraction"]
    lines += [f"{t:g},{f:g}" for t, f in zip(curve.thresholds,
                                             curve.fractions)]
    return "\n".join(lines) + "\n"


def fps_bench(params: NetworkParams, head_index: int, images,
              repeats: int = 50, warmup: int = 5) -> float:
    """Single-image inference throughput (images/second).

    Exactly one image per forward call; normalization happens outside
    the timed region. Strictly sequential.
    """
    if repeats < 1:
        raise ContractViolation("repeats must be >= 1")
    stack = normalize_pixels(np.asarray(images)).astype(params.dtype)
    if stack.ndim == 3:
        stack = stack[None]
    w = params.head(head_index).value
    for i in range(warmup):
        x, _ = forward_features(params, stack[i % len(stack)][None], "infer")
        x @ w
    start = time.perf_counter()
    for i in range(repeats):
        x, _ = forward_features(params, stack[i % len(stack)][None], "infer")
        x @ w
    elapsed = time.perf_counter() - start
    return repeats / elapsed


def occlusion_report(params_wm: NetworkParams, params_am: NetworkParams,
                     test: Dataset, cluster_index: int,
                     gray_value: int = 128) -> list:
    """Mean error (%) of the occluded cluster's landmarks vs all others,
    on clean and gray-filled copies of the test set, for both models.

    Returns eight rows: {model, condition, group, mean_error}.
    """
    part = clusters_for_pattern(test.pattern)
    idx = part.clusters[cluster_index]
    others = part.complements[cluster_index]
    occluded = Dataset(test.pattern, test.split,
                       [occlude_cluster(s, cluster_index, gray_value)
                        for s in test.samples])
    rows = []
    for model_name, params in (("WM", params_wm), ("AM", params_am)):
        for condition, ds in (("clean", test), ("occluded", occluded)):
            errs = error_matrix(predict_dataset(params, ds), ds)
            rows.append({"model": model_name, "condition": condition,
                         "group": "cluster",
                         "mean_error": float(errs[:, idx].mean() * 100.0)})
            rows.append({"model": model_name, "condition": condition,
                         "group": "others",
                         "mean_error": float(errs[:, others].mean() * 100.0)})
    return rows


def occlusion_to_csv(rows: list) -> str:
    lines = ["model,condition,group,mean_error"]
    lines += [f"{r['model']},{r['condition']},{r['group']},"
              f"{r['mean_error']:.2f}" for r in rows]
    return "\n".join(lines) + "\n"
