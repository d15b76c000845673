"""Dense linear algebra, activations, row normalization, and a gradient checker.

All functions are pure, operate on float64 ndarrays, and every backward pass
is hand-derived (no autodiff graph). Matrices are plain 2-d numpy arrays in
row-major order; a batch is rows, features are columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# tanh-approximation GELU constants
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715

DEFAULT_NORM_EPS = 1e-12


class NumericsError(ValueError):
    """Raised on dimension mismatches or non-finite values in numeric kernels."""


@dataclass
class GradCheckReport:
    """Outcome of a central finite-difference check against an analytic gradient."""

    max_rel_error: float
    worst_param_index: int
    eps: float


def as_matrix(x) -> np.ndarray:
    """Coerce input to a float64 2-d array without copying when possible."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise NumericsError(f"expected a 2-d matrix, got ndim={a.ndim}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with an explicit conformability check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise NumericsError(
            f"matmul dimension mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def gelu_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Upstream gradient times dGELU/dx at x (same tanh approximation)."""
    x = np.asarray(x, dtype=np.float64)
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return np.asarray(upstream) * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    t = np.tanh(np.asarray(x, dtype=np.float64))
    return np.asarray(upstream) * (1.0 - t**2)


def l2_normalize_rows(x: np.ndarray, eps: float = DEFAULT_NORM_EPS) -> np.ndarray:
    """Divide each row by max(||row||_2, eps)."""
    if eps <= 0:
        raise NumericsError(f"eps must be positive, got {eps}")
    x = as_matrix(x)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def l2_normalize_rows_backward(
    x: np.ndarray, upstream: np.ndarray, eps: float = DEFAULT_NORM_EPS
) -> np.ndarray:
    """Gradient of l2_normalize_rows w.r.t. x, chained with `upstream`.

    For rows with norm >= eps: d/dx [x/||x||] projects the upstream gradient
    onto the tangent space of the sphere, scaled by 1/||x||. Rows clamped at
    eps are a constant 1/eps scaling.
    """
    x = as_matrix(x)
    upstream = as_matrix(upstream)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    clamped = norms < eps
    n = np.maximum(norms, eps)
    y = x / n
    grad = (upstream - y * np.sum(upstream * y, axis=1, keepdims=True)) / n
    if np.any(clamped):
        grad = np.where(clamped, upstream / eps, grad)
    return grad


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    x = as_matrix(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def finite_difference_check(
    loss_fn, params: np.ndarray, analytic_grad: np.ndarray, eps: float = 1e-6
) -> GradCheckReport:
    """Central finite differences of `loss_fn` around `params`, per coordinate.

    `loss_fn` maps a parameter array (same shape as `params`) to a scalar.
    Relative error per coordinate is |g_fd - g_an| / max(|g_fd|, |g_an|, 1e-8);
    the report carries the worst coordinate (flat index).
    """
    if not (0.0 < eps <= 1e-2):
        raise NumericsError(f"finite-difference eps must lie in (0, 1e-2], got {eps}")
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if params.shape != analytic.shape:
        raise NumericsError(
            f"analytic gradient shape {analytic.shape} does not match params {params.shape}"
        )
    flat = params.ravel().copy()
    an = analytic.ravel()
    max_rel = 0.0
    worst = 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(loss_fn(flat.reshape(params.shape)))
        flat[i] = orig - eps
        f_minus = float(loss_fn(flat.reshape(params.shape)))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericsError(
                f"non-finite loss during finite-difference check at flat index {i}"
            )
        g_fd = (f_plus - f_minus) / (2.0 * eps)
        rel = abs(g_fd - an[i]) / max(abs(g_fd), abs(an[i]), 1e-8)
        if rel > max_rel:
            max_rel = rel
            worst = i
    return GradCheckReport(max_rel_error=float(max_rel), worst_param_index=worst, eps=eps)
