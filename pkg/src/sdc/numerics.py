"""Dense numeric kernels: stable softmax/entropy, normalization, gradient checking.

All public functions accept array-likes, compute in float64, and raise
ValueError on malformed input. Everything here is pure and thread-safe.
"""

import numpy as np

__all__ = [
    "as_finite_array",
    "check_matrix",
    "softmax",
    "entropy",
    "sigmoid",
    "l2_normalize",
    "l2_normalize_rows",
    "finite_diff_check",
]


def as_finite_array(x, name="array"):
    """Convert to a float64 ndarray, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matrix(x, rows=None, cols=None, name="matrix"):
    """Validate a finite 2-D float matrix, optionally pinning its shape."""
    arr = as_finite_array(x, name=name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


def softmax(v):
    """Stable softmax. 1-D input gives a probability vector; 2-D applies row-wise."""
    arr = as_finite_array(v, name="logits")
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p, atol=1e-9):
    """Shannon entropy in nats, with 0*log(0) taken as 0.

    1-D input gives a scalar; 2-D applies row-wise. Entries must be
    nonnegative and each distribution must sum to 1 within `atol`.
    """
    arr = as_finite_array(p, name="probabilities")
    if arr.size == 0:
        raise ValueError("entropy of an empty vector")
    if np.any(arr < 0):
        raise ValueError("probabilities must be nonnegative")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError("probabilities must sum to 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(arr > 0, arr * np.log(arr), 0.0)
    return -terms.sum(axis=-1)


def sigmoid(x):
    """Numerically stable logistic function."""
    arr = as_finite_array(x, name="x")
    out = np.empty_like(arr, dtype=np.float64)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def l2_normalize(v):
    """Scale a vector to unit Euclidean norm. Raises on (near-)zero input."""
    arr = as_finite_array(v, name="vector")
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return arr / norm


def l2_normalize_rows(m):
    """Row-wise unit normalization of a matrix. Raises if any row is zero."""
    arr = check_matrix(m, name="matrix")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize zero rows")
    return arr / norms


def finite_diff_check(loss, params, epsilon=1e-5):
    """Compare a loss's analytic gradient against central differences.

    Args:
        loss: callable mapping a 1-D parameter vector to (value, gradient).
        params: point at which to check.
        epsilon: central-difference step, must lie in [1e-7, 1e-3].

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    p = as_finite_array(params, name="params").ravel().copy()
    value, grad = loss(p)
    if not np.isfinite(value):
        raise ValueError("loss returned a non-finite value")
    grad = as_finite_array(grad, name="gradient").ravel()
    if grad.shape != p.shape:
        raise ValueError("gradient shape does not match parameter shape")

    worst = 0.0
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + epsilon
        up, _ = loss(p)
        p[i] = orig - epsilon
        down, _ = loss(p)
        p[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("loss returned a non-finite value")
        numeric = (up - down) / (2.0 * epsilon)
        err = abs(grad[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
