"""Contrastive training objectives with exact hand-derived gradients.

InfoNCE over a batch of paired embeddings (q_i, k_i): the aligned pair is the
positive and every other k_j in the batch is a negative, so row i's loss is

    -log exp(q_i.k_i / tau) / sum_j exp(q_i.k_j / tau)

averaged over the batch. Negatives are cross-modal only (k_j, never q_j).
The symmetric variant adds the same loss with roles swapped. Temperature is
either fixed or learnable in log-scale, clamped to a safe range. An optional
L2 regression objective on the embedding pairs is provided for loss-mix
ablations; it can be combined with InfoNCE via a weight at the trainer level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import NumericsError, as_matrix, softmax_rows

TAU_CLAMP_MIN = 0.01
TAU_CLAMP_MAX = 5.0


@dataclass
class TemperatureParam:
    """Softmax temperature, fixed or trained in log-scale.

    When learnable, `log_tau` is the optimized parameter and tau = exp(log_tau)
    clamped to [clamp_min, clamp_max]. Clamping is applied on every update so
    the invariant clamp_min <= tau <= clamp_max holds at all times.
    """

    mode: str = "fixed"  # "fixed" | "learnable"
    value: float = 0.07
    log_tau: float = field(default=None)  # type: ignore[assignment]
    clamp_min: float = TAU_CLAMP_MIN
    clamp_max: float = TAU_CLAMP_MAX

    def __post_init__(self):
        if self.mode not in ("fixed", "learnable"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")
        if not (self.clamp_min > 0 and self.clamp_min <= self.clamp_max):
            raise ValueError("temperature clamps must satisfy 0 < clamp_min <= clamp_max")
        if self.value <= 0:
            raise ValueError(f"temperature must be positive, got {self.value}")
        if self.log_tau is None:
            self.log_tau = math.log(self.value)
        self._clamp()

    def _clamp(self):
        self.log_tau = min(max(self.log_tau, math.log(self.clamp_min)), math.log(self.clamp_max))

    @property
    def learnable(self) -> bool:
        return self.mode == "learnable"

    @property
    def tau(self) -> float:
        if self.learnable:
            return math.exp(self.log_tau)
        return min(max(self.value, self.clamp_min), self.clamp_max)

    def apply_update(self, new_log_tau: float) -> None:
        """Set the trained log-temperature, enforcing the clamp range."""
        if not self.learnable:
            raise ValueError("cannot update a fixed temperature")
        self.log_tau = float(new_log_tau)
        self._clamp()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "value": self.value,
            "log_tau": self.log_tau,
            "clamp_min": self.clamp_min,
            "clamp_max": self.clamp_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemperatureParam":
        return cls(**d)


@dataclass
class LossOutput:
    """Scalar loss plus exact gradients w.r.t. both embedding matrices and log-tau."""

    loss: float
    grad_q: np.ndarray
    grad_k: np.ndarray
    grad_log_tau: float = 0.0


def similarity_matrix(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Pairwise inner products: entry (i, j) = q_i . k_j."""
    q = as_matrix(q)
    k = as_matrix(k)
    if q.shape[1] != k.shape[1]:
        raise NumericsError(f"embedding dim mismatch: {q.shape} vs {k.shape}")
    return q @ k.T


def info_nce(q: np.ndarray, k: np.ndarray, temp: TemperatureParam) -> LossOutput:
    """One-directional InfoNCE with in-batch negatives and exact gradients.

    Returns the batch mean of -log softmax(S_i / tau)[i] where S = q @ k.T.
    grad_q/grad_k are gradients w.r.t. the (already normalized) embeddings;
    grad_log_tau is zero whenever the temperature is fixed.
    """
    q = as_matrix(q)
    k = as_matrix(k)
    if q.shape != k.shape:
        raise NumericsError(f"embedding shape mismatch: {q.shape} vs {k.shape}")
    n = q.shape[0]
    if n == 0:
        raise NumericsError("info_nce requires a non-empty batch")
    tau = temp.tau
    s = similarity_matrix(q, k)
    logits = s / tau
    # stable log-sum-exp per row
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - np.diag(logits)))
    d = (softmax_rows(logits) - np.eye(n)) / (n * tau)
    grad_q = d @ k
    grad_k = d.T @ q
    grad_log_tau = -float(np.sum(d * s)) if temp.learnable else 0.0
    return LossOutput(loss=loss, grad_q=grad_q, grad_k=grad_k, grad_log_tau=grad_log_tau)


def symmetric_info_nce(q: np.ndarray, k: np.ndarray, temp: TemperatureParam) -> LossOutput:
    """Sum of both InfoNCE directions, gradients accumulated per argument."""
    fwd = info_nce(q, k, temp)
    rev = info_nce(k, q, temp)
    return LossOutput(
        loss=fwd.loss + rev.loss,
        grad_q=fwd.grad_q + rev.grad_k,
        grad_k=fwd.grad_k + rev.grad_q,
        grad_log_tau=fwd.grad_log_tau + rev.grad_log_tau,
    )


def l2_regression_loss(q: np.ndarray, k: np.ndarray) -> LossOutput:
    """Mean squared distance between paired embeddings: mean_i ||q_i - k_i||^2."""
    q = as_matrix(q)
    k = as_matrix(k)
    if q.shape != k.shape:
        raise NumericsError(f"embedding shape mismatch: {q.shape} vs {k.shape}")
    n = q.shape[0]
    diff = q - k
    loss = float(np.sum(diff**2) / n)
    grad_q = 2.0 * diff / n
    return LossOutput(loss=loss, grad_q=grad_q, grad_k=-grad_q, grad_log_tau=0.0)
