"""Logit calibration driven by the frozen biased model.

For an unlabeled instance with current logits L over K categories and
biased logits Lb over the M known categories:

    known block   L[:M] - alpha * Lb          (bias mitigation)
    novel block   L[M:] + alpha * T^t Lb      (confusion mitigation)

T is the M x N transfer matrix of known-to-novel prototype similarities,
softmax-normalized per row. The per-instance weight alpha follows the
entropy of the biased prediction: confidently-known instances get a
near-zero alpha, batch-max-entropy instances get beta/2.
"""

from dataclasses import dataclass

import numpy as np

from .data import SPLIT_UNLABELED
from .numerics import check_matrix, entropy, sigmoid, softmax

__all__ = ["CalibrationState", "build_state", "compute_alpha", "calibrate"]


@dataclass(frozen=True)
class CalibrationState:
    """Cached biased outputs for a fixed set of unlabeled rows.

    Rows align with the unlabeled instances handed to `build_state`;
    `ids` keeps their dataset ids. Exact caching is sound because the
    biased model is frozen.
    """

    biased_logits: np.ndarray  # n x M
    entropies: np.ndarray  # n
    transfer: np.ndarray  # M x N, rows sum to 1
    beta: float
    ids: np.ndarray = None

    def __post_init__(self):
        logits = check_matrix(self.biased_logits, name="biased_logits")
        m = logits.shape[1]
        ent = np.asarray(self.entropies, dtype=np.float64)
        if ent.shape != (logits.shape[0],):
            raise ValueError("entropies must have one entry per row")
        if np.any(ent < -1e-12) or np.any(ent > np.log(max(m, 2)) + 1e-9):
            raise ValueError("entropies must lie in [0, log M]")
        transfer = check_matrix(self.transfer, rows=m, name="transfer")
        if np.any(transfer < 0) or np.any(np.abs(transfer.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transfer rows must be nonnegative and sum to 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def num_known(self):
        return self.biased_logits.shape[1]

    @property
    def num_novel(self):
        return self.transfer.shape[1]


def transfer_matrix(prototypes, num_known):
    """Known-to-novel prototype similarity, softmax-normalized per row."""
    protos = check_matrix(prototypes, name="prototypes")
    k = protos.shape[0]
    if not (0 < num_known < k):
        raise ValueError("need at least one known and one novel prototype")
    raw = protos[:num_known] @ protos[num_known:].T
    return softmax(raw)


def build_state(biased, unlabeled, prototypes, beta):
    """Run the frozen biased model once over the unlabeled rows and cache
    logits, entropies, and the transfer matrix."""
    protos = check_matrix(prototypes, cols=biased.feature_dim, name="prototypes")
    norms = np.linalg.norm(protos, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("prototype rows must be unit-norm")
    m = biased.num_classes
    k = protos.shape[0]
    if m == 0 or k - m == 0:
        raise ValueError("calibration needs at least one known and one novel category")
    idx = unlabeled.indices(SPLIT_UNLABELED)
    if idx.size == 0:
        raise ValueError("unlabeled split is empty")
    _, logits = biased.forward(unlabeled.features[idx].astype(np.float64))
    return CalibrationState(
        biased_logits=logits,
        entropies=entropy(softmax(logits)),
        transfer=transfer_matrix(protos, m),
        beta=beta,
        ids=unlabeled.ids[idx],
    )


def compute_alpha(entropies_batch, beta):
    """Per-instance calibration weight beta * sigmoid(E_i - E_max), with
    E_max the maximum entropy in the current batch."""
    ent = np.asarray(entropies_batch, dtype=np.float64)
    if ent.size == 0:
        raise ValueError("empty entropy batch")
    return beta * sigmoid(ent - ent.max())


def calibrate(
    original_logits,
    biased_logits,
    alpha,
    transfer,
    apply_cbm=True,
    apply_ccm=True,
):
    """Adjust logits using the biased model's output.

    Accepts a single K-vector with scalar alpha, or a B x K batch with a
    per-row alpha vector. The known block has alpha * biased logits
    subtracted; the novel block has alpha * (transfer^t biased logits)
    added. The two flags switch either adjustment off independently.
    """
    transfer = check_matrix(transfer, name="transfer")
    m, n_novel = transfer.shape
    if np.any(transfer < 0) or np.any(np.abs(transfer.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("transfer rows must be nonnegative and sum to 1")

    orig = np.asarray(original_logits, dtype=np.float64)
    single = orig.ndim == 1
    orig = np.atleast_2d(orig)
    bias = np.atleast_2d(np.asarray(biased_logits, dtype=np.float64))
    if orig.shape[1] != m + n_novel:
        raise ValueError(
            f"original logits must have {m + n_novel} entries, got {orig.shape[1]}"
        )
    if bias.shape != (orig.shape[0], m):
        raise ValueError("biased logits shape does not match")
    a = np.asarray(alpha, dtype=np.float64).reshape(-1, 1)
    if a.shape[0] == 1 and orig.shape[0] > 1:
        a = np.broadcast_to(a, (orig.shape[0], 1))
    if a.shape[0] != orig.shape[0]:
        raise ValueError("alpha must be scalar or one value per row")
    if np.any(a < 0):
        raise ValueError("alpha must be nonnegative")

    known = orig[:, :m] - a * bias if apply_cbm else orig[:, :m].copy()
    novel = orig[:, m:] + a * (bias @ transfer) if apply_ccm else orig[:, m:].copy()
    out = np.hstack([known, novel])
    return out[0] if single else out
