"""Per-modality encoder stacks: MLP trunk plus a linear or MLP projection head.

Each encoder maps raw observations to L2-row-normalized embeddings in the
shared d-dimensional space. Forward passes cache enough to run an exact
hand-derived backward pass; the MLP head variant is
Linear(in, in) -> GELU -> Linear(in, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import (
    NumericsError,
    gelu_backward,
    gelu_forward,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    tanh_backward,
    tanh_forward,
)
from .world import stream_rng

_ACTIVATIONS = {
    "gelu": (gelu_forward, gelu_backward),
    "tanh": (tanh_forward, tanh_backward),
}


@dataclass(frozen=True)
class EncoderArch:
    """Shape of one modality's encoder; embed_dim must match across modalities."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    embed_dim: int
    head: str = "linear"  # "linear" | "mlp"
    activation: str = "gelu"  # trunk activation: "gelu" | "tanh"

    def __post_init__(self):
        if self.head not in ("linear", "mlp"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ValueError("input_dim and embed_dim must be >= 1")
        if any(h < 1 for h in self.hidden_widths):
            raise ValueError("hidden widths must be >= 1")

    def layer_plan(self) -> list[tuple[int, int, str | None]]:
        """(in_dim, out_dim, activation) per affine layer, trunk then head."""
        plan = []
        prev = self.input_dim
        for h in self.hidden_widths:
            plan.append((prev, h, self.activation))
            prev = h
        if self.head == "linear":
            plan.append((prev, self.embed_dim, None))
        else:
            plan.append((prev, prev, "gelu"))
            plan.append((prev, self.embed_dim, None))
        return plan

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "embed_dim": self.embed_dim,
            "head": self.head,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderArch":
        return cls(
            input_dim=d["input_dim"],
            hidden_widths=tuple(d["hidden_widths"]),
            embed_dim=d["embed_dim"],
            head=d["head"],
            activation=d["activation"],
        )


@dataclass
class EncoderParams:
    """Weights/biases for every affine layer of one encoder, in layer order."""

    arch: EncoderArch
    weights: list[np.ndarray]  # each (out_dim, in_dim)
    biases: list[np.ndarray]  # each (out_dim,)
    frozen: bool = False

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            frozen=self.frozen,
        )

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (weights and biases interleaved)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "frozen": self.frozen,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderParams":
        return cls(
            arch=EncoderArch.from_dict(d["arch"]),
            weights=[np.asarray(w, dtype=np.float64) for w in d["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
            frozen=d["frozen"],
        )


@dataclass
class EncoderGrads:
    """Parameter gradients, shape-parallel to EncoderParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ForwardCache:
    """Everything the backward pass needs: per-layer inputs and pre-activations."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    pre_norm: np.ndarray | None = None


def init_encoder(arch: EncoderArch, seed: int) -> EncoderParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = stream_rng(seed, "encoder/init")
    weights, biases = [], []
    for in_dim, out_dim, _ in arch.layer_plan():
        a = np.sqrt(6.0 / (in_dim + out_dim))
        weights.append(rng.uniform(-a, a, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return EncoderParams(arch=arch, weights=weights, biases=biases)


def encode(params: EncoderParams, obs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass: trunk, head, then row normalization onto the unit sphere."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != params.arch.input_dim:
        raise NumericsError(
            f"observation dim {obs.shape} does not match encoder input_dim {params.arch.input_dim}"
        )
    cache = ForwardCache()
    h = obs
    for (W, b), (_, _, act) in zip(
        zip(params.weights, params.biases), params.arch.layer_plan()
    ):
        cache.inputs.append(h)
        pre = h @ W.T + b
        cache.pre_activations.append(pre)
        h = _ACTIVATIONS[act][0](pre) if act else pre
    cache.pre_norm = h
    return l2_normalize_rows(h), cache


def encode_backward(
    params: EncoderParams, cache: ForwardCache, grad_embeddings: np.ndarray
) -> EncoderGrads:
    """Exact gradients of the (normalized) embeddings w.r.t. all parameters.

    Frozen encoders yield an all-zero gradient block of the right shape.
    """
    if grad_embeddings.shape != cache.pre_norm.shape:
        raise NumericsError(
            f"grad shape {grad_embeddings.shape} does not match embeddings {cache.pre_norm.shape}"
        )
    if params.frozen:
        return zero_grads(params)
    g = l2_normalize_rows_backward(cache.pre_norm, grad_embeddings)
    plan = params.arch.layer_plan()
    d_weights = [None] * len(plan)
    d_biases = [None] * len(plan)
    for i in range(len(plan) - 1, -1, -1):
        act = plan[i][2]
        if act:
            g = _ACTIVATIONS[act][1](cache.pre_activations[i], g)
        d_weights[i] = g.T @ cache.inputs[i]
        d_biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i]
    return EncoderGrads(weights=d_weights, biases=d_biases)


def zero_grads(params: EncoderParams) -> EncoderGrads:
    return EncoderGrads(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def params_to_vec(params: EncoderParams) -> np.ndarray:
    """Flatten all parameters into one vector (fixed layer order)."""
    return np.concatenate([a.ravel() for a in params.arrays()])


def vec_to_params(arch: EncoderArch, vec: np.ndarray, frozen: bool = False) -> EncoderParams:
    """Inverse of params_to_vec for the given architecture."""
    weights, biases = [], []
    pos = 0
    for in_dim, out_dim, _ in arch.layer_plan():
        weights.append(vec[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim).copy())
        pos += out_dim * in_dim
        biases.append(vec[pos : pos + out_dim].copy())
        pos += out_dim
    if pos != vec.size:
        raise NumericsError(f"parameter vector length {vec.size} does not match arch (need {pos})")
    return EncoderParams(arch=arch, weights=weights, biases=biases, frozen=frozen)


def with_frozen(params: EncoderParams, frozen: bool) -> EncoderParams:
    return replace(params, frozen=frozen)
