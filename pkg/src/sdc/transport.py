"""Balanced pseudo-label assignment via entropic optimal transport.

Given a batch of B calibrated logit rows over K categories, solve for the
nonnegative plan Y maximizing <Y, L> + eps * H(Y) subject to uniform
marginals: every row sums to 1/B and every column to 1/K. The solution is a
Sinkhorn scaling of exp(L / eps); hard pseudo labels are the per-row argmax.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import check_matrix

__all__ = ["TransportPlan", "sinkhorn_pseudo_labels"]


@dataclass
class TransportPlan:
    plan: np.ndarray  # B x K, nonnegative
    pseudo_labels: np.ndarray  # B, argmax of each plan row
    iterations_used: int
    marginal_error: float  # worst L-inf violation of either marginal
    dual_trace: list = field(default_factory=list)


def sinkhorn_pseudo_labels(
    calibrated_logits, epsilon=0.05, max_iters=500, tol=1e-6, track_dual=False
):
    """Alternate row/column scaling until both marginals hold within `tol`.

    The kernel exp(L / eps) is computed after per-row max subtraction, which
    only rescales rows and leaves the balanced solution unchanged. Raises if
    a kernel column underflows to zero (remedy: larger epsilon).
    """
    logits = check_matrix(calibrated_logits, name="calibrated_logits")
    b, k = logits.shape
    if b < 1 or k < 2:
        raise ValueError(f"need B >= 1 and K >= 2, got B={b}, K={k}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    kernel = np.exp((logits - logits.max(axis=1, keepdims=True)) / epsilon)
    if np.any(kernel.sum(axis=0) == 0.0):
        raise ValueError(
            "transport kernel underflowed to an all-zero column; use a larger epsilon"
        )

    row_target = 1.0 / b
    col_target = 1.0 / k
    u = np.full(b, row_target)
    v = np.ones(k)
    iterations = 0
    err = np.inf
    trace = []
    for _ in range(max_iters):
        u = row_target / (kernel @ v)
        v = col_target / (kernel.T @ u)
        iterations += 1
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError(
                "sinkhorn scaling diverged (underflow); use a larger epsilon"
            )
        plan = u[:, None] * kernel * v[None, :]
        if track_dual:
            # Dual of the entropic problem; each half update is a coordinate
            # ascent, so this is non-decreasing.
            trace.append(
                float(
                    epsilon
                    * (
                        row_target * np.log(u).sum()
                        + col_target * np.log(v).sum()
                        - plan.sum()
                    )
                )
            )
        row_err = np.abs(plan.sum(axis=1) - row_target).max()
        col_err = np.abs(plan.sum(axis=0) - col_target).max()
        err = max(row_err, col_err)
        if err < tol:
            break

    plan = u[:, None] * kernel * v[None, :]
    return TransportPlan(
        plan=plan,
        pseudo_labels=plan.argmax(axis=1),
        iterations_used=iterations,
        marginal_error=float(err),
        dual_trace=trace,
    )
