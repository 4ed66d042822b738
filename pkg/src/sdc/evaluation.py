"""Discovery metrics: Hungarian-matched accuracy, H-score, error quadrants.

Accuracy is reported separately for known-category and novel-category test
rows after mapping predicted cluster ids to categories with a single joint
Hungarian match over all K categories (identity for classifier-mode
predictions, whose indices are already category-bound). Errors fall into
four quadrants by (true side, predicted side) of the known/novel divide.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .clustering import hungarian

__all__ = [
    "MetricsReport",
    "EntropySummary",
    "h_score",
    "hungarian_map",
    "compute_metrics",
    "entropy_report",
]


def h_score(acc_known, acc_novel):
    """Harmonic mean of the two accuracies (0 when both are 0)."""
    if acc_known < 0 or acc_novel < 0:
        raise ValueError("accuracies must be nonnegative")
    total = acc_known + acc_novel
    if total == 0:
        return 0.0
    return 2.0 * acc_known * acc_novel / total


@dataclass
class MetricsReport:
    acc_known: float  # percent
    acc_novel: float  # percent
    h_score: float  # percent
    quadrants: dict  # error counts kk, kn, nk, nn
    correct_known: int
    correct_novel: int
    n_test: int
    mapping: np.ndarray  # cluster -> category used for scoring
    mode: str = "clustering"

    def to_dict(self):
        return {
            "h_score": self.h_score,
            "known": self.acc_known,
            "novel": self.acc_novel,
            "quadrants": {k: int(v) for k, v in sorted(self.quadrants.items())},
            "n_test": int(self.n_test),
            "mode": self.mode,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self):
        q = self.quadrants
        lines = [
            f"{'metric':<12}{'value':>10}",
            f"{'H-score':<12}{self.h_score:>10.2f}",
            f"{'Known':<12}{self.acc_known:>10.2f}",
            f"{'Novel':<12}{self.acc_novel:>10.2f}",
            f"{'n_test':<12}{self.n_test:>10d}",
            f"{'mode':<12}{self.mode:>10}",
            "errors (true -> predicted):",
            f"{'  known->known':<16}{q['kk']:>6d}",
            f"{'  known->novel':<16}{q['kn']:>6d}",
            f"{'  novel->known':<16}{q['nk']:>6d}",
            f"{'  novel->novel':<16}{q['nn']:>6d}",
        ]
        return "\n".join(lines)


def hungarian_map(preds, gts, k):
    """Accuracy-maximizing bijection cluster -> category over K categories."""
    preds = np.asarray(preds, dtype=np.int64)
    gts = np.asarray(gts, dtype=np.int64)
    if preds.shape != gts.shape:
        raise ValueError("preds and gts must have the same length")
    if np.any(preds < 0) or np.any(preds >= k) or np.any(gts < 0) or np.any(gts >= k):
        raise ValueError("cluster and category indices must lie in [0, K)")
    contingency = np.zeros((k, k), dtype=np.int64)
    np.add.at(contingency, (preds, gts), 1)
    return np.asarray(hungarian(-contingency.astype(np.float64)).mapping)


def compute_metrics(preds, gts, label_space, mapping=None, mode="clustering"):
    """Score predictions against hidden ground truth.

    `mapping` is the cluster-to-category map to apply before scoring
    (identity when None, as for classifier-mode predictions). Every test row
    must carry a ground-truth label.
    """
    preds = np.asarray(preds, dtype=np.int64)
    gts = np.asarray(gts, dtype=np.int64)
    if preds.shape != gts.shape or preds.ndim != 1:
        raise ValueError("preds and gts must be 1-D and the same length")
    if preds.size == 0:
        raise ValueError("no test rows to score")
    if np.any(gts < 0):
        raise ValueError("test rows are missing ground-truth labels")
    k = label_space.total
    m = label_space.num_known
    if mapping is None:
        mapping = np.arange(k, dtype=np.int64)
    mapping = np.asarray(mapping, dtype=np.int64)
    if mapping.shape != (k,) or len(set(mapping.tolist())) != k:
        raise ValueError("mapping must be a bijection over 0..K-1")
    if np.any(preds >= k) or np.any(gts >= k):
        raise ValueError("indices must lie in [0, K)")

    mapped = mapping[preds]
    known_rows = gts < m
    novel_rows = ~known_rows
    correct = mapped == gts

    def pct(mask):
        return 100.0 * float(correct[mask].mean()) if mask.any() else 0.0

    acc_known = pct(known_rows)
    acc_novel = pct(novel_rows)
    quadrants = {
        "kk": int(np.sum(known_rows & ~correct & (mapped < m))),
        "kn": int(np.sum(known_rows & ~correct & (mapped >= m))),
        "nk": int(np.sum(novel_rows & ~correct & (mapped < m))),
        "nn": int(np.sum(novel_rows & ~correct & (mapped >= m))),
    }
    return MetricsReport(
        acc_known=acc_known,
        acc_novel=acc_novel,
        h_score=h_score(acc_known, acc_novel),
        quadrants=quadrants,
        correct_known=int(np.sum(known_rows & correct)),
        correct_novel=int(np.sum(novel_rows & correct)),
        n_test=int(preds.size),
        mapping=mapping,
        mode=mode,
    )


@dataclass
class EntropySummary:
    mean_known: float
    std_known: float
    mean_novel: float
    std_novel: float
    gap: float = field(init=False)

    def __post_init__(self):
        self.gap = self.mean_novel - self.mean_known


def entropy_report(state, gts, label_space):
    """Biased-prediction entropy statistics per ground-truth side.

    The gap (novel mean minus known mean) is the separation the entropy
    weighting relies on.
    """
    gts = np.asarray(gts, dtype=np.int64)
    ent = state.entropies
    if gts.shape != ent.shape:
        raise ValueError("need one ground-truth label per cached instance")
    known = ent[(gts >= 0) & (gts < label_space.num_known)]
    novel = ent[gts >= label_space.num_known]
    if known.size == 0 or novel.size == 0:
        raise ValueError("both known and novel groups must be non-empty")
    return EntropySummary(
        mean_known=float(known.mean()),
        std_known=float(known.std()),
        mean_novel=float(novel.mean()),
        std_novel=float(novel.std()),
    )
