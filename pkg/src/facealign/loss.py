"""The weighted alignment loss, its analytic gradient, and the landmark
weight constructions used by the training stages.

For a prediction yhat and ground truth y with per-landmark weights u and
inter-ocular distance d, the loss is

    E = sum_j u_j * [(y_2j-1 - yhat_2j-1)^2 + (y_2j - yhat_2j)^2] / (2 d^2)

and its gradient w.r.t. yhat_k is u_j (yhat_k - y_k) / d^2 for
k in {2j-1, 2j}. Every weight construction keeps sum(u) == n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .geometry import ClusterPartition, Shape

DEFAULT_ALPHA = 125.0


@dataclass(frozen=True)
class WeightVector:
    """Per-landmark loss weights with their provenance tag."""

    u: np.ndarray
    provenance: str = "uniform"

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        object.__setattr__(self, "u", u)
        if u.ndim != 1:
            raise ContractViolation("weights must be a flat vector")
        if np.any(u < 0):
            raise ContractViolation("weights must be nonnegative")

    @property
    def n(self) -> int:
        return self.u.size

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), "uniform")


@dataclass(frozen=True)
class ErrorProfile:
    """Mean validation error per landmark (fractions of inter-ocular
    distance), tagged with the model that produced it."""

    eps: np.ndarray
    source_model: str = "BM"

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=np.float64)
        object.__setattr__(self, "eps", eps)
        if not np.all(np.isfinite(eps)) or np.any(eps < 0):
            raise ContractViolation("error profile must be finite and >= 0")

    @property
    def n(self) -> int:
        return self.eps.size


def _expand_weights(u: np.ndarray) -> np.ndarray:
    """Repeat per-landmark weights onto the interleaved 2n coordinates."""
    return np.repeat(u, 2)


def weighted_loss(pred: Shape, gt: Shape, u: WeightVector, d: float) -> float:
    """Weighted squared alignment error scaled by 1/(2 d^2)."""
    if d <= 0:
        raise ContractViolation("inter-ocular distance must be positive")
    if pred.coords.size != gt.coords.size or u.n * 2 != gt.coords.size:
        raise ContractViolation("pred/gt/weights length mismatch")
    sq = (gt.coords - pred.coords) ** 2
    return float(np.dot(_expand_weights(u.u), sq) / (2.0 * d * d))


def loss_gradient(pred: Shape, gt: Shape, u: WeightVector,
                  d: float) -> np.ndarray:
    """d(loss)/d(pred): u_j (yhat_k - y_k) / d^2 per coordinate."""
    if d <= 0:
        raise ContractViolation("inter-ocular distance must be positive")
    if pred.coords.size != gt.coords.size or u.n * 2 != gt.coords.size:
        raise ContractViolation("pred/gt/weights length mismatch")
    return _expand_weights(u.u) * (pred.coords - gt.coords) / (d * d)


def weights_from_errors(profile: ErrorProfile) -> WeightVector:
    """Weights proportional to per-landmark validation error, summing to n."""
    total = profile.eps.sum()
    if total <= 0:
        raise ContractViolation(
            "error profile sums to zero; proportional weights undefined")
    n = profile.n
    return WeightVector(n * profile.eps / total, "weighting")


def multicenter_group_weights(cluster_size: int, n: int,
                              alpha: float) -> tuple[float, float]:
    """Group-level weights (u_P, u_Q) for an emphasized cluster of size |P|:

        u_P = alpha*n / ((alpha-1)*|P| + n)
        u_Q =       n / ((alpha-1)*|P| + n)

    so that u_P / u_Q == alpha and u_P*|P| + u_Q*(n-|P|) == n.
    """
    if alpha <= 1:
        raise ContractViolation("alpha must be > 1")
    if not 1 <= cluster_size <= n:
        raise ContractViolation("cluster size out of range")
    denom = (alpha - 1.0) * cluster_size + n
    return alpha * n / denom, n / denom


def multicenter_weights(cluster_index: int, profile: ErrorProfile,
                        partition: ClusterPartition,
                        alpha: float = DEFAULT_ALPHA) -> WeightVector:
    """Per-landmark weights emphasizing one cluster.

    The cluster's group mass u_P*|P| (and the complement's u_Q*(n-|P|)) is
    redistributed inside each group proportionally to the error profile;
    a zero-error landmark gets zero weight within its group.
    """
    n = profile.n
    p_idx = partition.clusters[cluster_index]
    q_idx = partition.complements[cluster_index]
    u_p, u_q = multicenter_group_weights(len(p_idx), n, alpha)
    eps = profile.eps
    p_sum = eps[p_idx].sum()
    q_sum = eps[q_idx].sum()
    if p_sum <= 0 or q_sum <= 0:
        raise ContractViolation(
            "error profile sums to zero inside a group; "
            "proportional redistribution undefined")
    u = np.empty(n, dtype=np.float64)
    u[p_idx] = u_p * len(p_idx) * eps[p_idx] / p_sum
    u[q_idx] = u_q * len(q_idx) * eps[q_idx] / q_sum
    return WeightVector(u, f"multicenter({cluster_index})")


def perturb_weights(u: WeightVector, delta: float,
                    seed: int) -> WeightVector:
    """Add +delta to floor(n/2) uniformly chosen landmarks and -delta to
    the rest; rejects perturbations that would push a weight below zero."""
    if delta < 0:
        raise ContractViolation("delta must be >= 0")
    n = u.n
    rng = np.random.default_rng(seed)
    plus = rng.choice(n, size=n // 2, replace=False)
    out = u.u - delta
    out[plus] = u.u[plus] + delta
    if np.any(out < 0):
        raise ContractViolation(
            f"perturbation delta={delta} drives a weight below zero")
    return WeightVector(out, f"perturbed({delta})")
