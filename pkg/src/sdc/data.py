"""Embedding datasets: label spaces, splits, file formats, synthetic generation.

A dataset is a feature matrix with one row per instance, a per-row split tag
(L = labeled, U = unlabeled, T = test), an optional per-row category label
(-1 when unknown), and a label space partitioning category indices into a
known prefix 0..M-1 and a novel suffix M..K-1. Labels on unlabeled and test
rows are hidden ground truth used only for evaluation.

File formats
    CSV: header line  #sdc-embeddings v1 d=<d> M=<M> N=<N>
         then one row per instance  id,split,label,f_0,...,f_{d-1}
         with split in {L,U,T} and label an integer or '?'.
    Binary: magic b'SDC1'; little-endian u32 n, d, M, N; then n records of
         (u32 id, u8 split as the ASCII code of L/U/T, i32 label with -1
         for unknown, d little-endian f32 features).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_finite_array

__all__ = [
    "LabelSpace",
    "EmbeddingDataset",
    "SyntheticConfig",
    "generate_synthetic",
    "split_dataset",
    "save_dataset",
    "load_dataset",
]

SPLIT_LABELED = "L"
SPLIT_UNLABELED = "U"
SPLIT_TEST = "T"
_VALID_SPLITS = (SPLIT_LABELED, SPLIT_UNLABELED, SPLIT_TEST)

_CSV_MAGIC = "#sdc-embeddings v1"
_BIN_MAGIC = b"SDC1"


@dataclass(frozen=True)
class LabelSpace:
    """Partition of category indices into known (0..M-1) and novel (M..K-1)."""

    num_known: int
    num_novel: int

    def __post_init__(self):
        if self.num_known < 0 or self.num_novel < 0:
            raise ValueError("category counts must be nonnegative")
        if self.total < 1:
            raise ValueError("label space must contain at least one category")

    @property
    def total(self):
        return self.num_known + self.num_novel

    @property
    def known_ids(self):
        return tuple(range(self.num_known))

    @property
    def novel_ids(self):
        return tuple(range(self.num_known, self.total))


@dataclass(frozen=True)
class EmbeddingDataset:
    """Immutable feature matrix plus per-row labels, split tags, and ids.

    `category_names` maps internal category index to the original category
    id before any re-indexing (identity for freshly generated data).
    """

    features: np.ndarray  # n x d, float32
    labels: np.ndarray  # n, int64, -1 = unknown
    split: np.ndarray  # n, one of L/U/T per row
    label_space: LabelSpace
    ids: np.ndarray = None  # n, uint32
    category_names: tuple = field(default=None)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise ValueError("features must be an n x d matrix with d >= 1")
        if feats.size and not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN/Inf entries")
        n = feats.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64)
        split = np.asarray(self.split, dtype="<U1")
        ids = (
            np.arange(n, dtype=np.uint32)
            if self.ids is None
            else np.asarray(self.ids, dtype=np.uint32)
        )
        if labels.shape != (n,) or split.shape != (n,) or ids.shape != (n,):
            raise ValueError("labels, split, and ids must each have one entry per row")
        bad = ~np.isin(split, _VALID_SPLITS)
        if np.any(bad):
            raise ValueError(f"invalid split tag {split[bad][0]!r}")
        k = self.label_space.total
        if np.any(labels < -1) or np.any(labels >= k):
            raise ValueError("labels must lie in [-1, K)")
        lab_mask = split == SPLIT_LABELED
        if np.any(labels[lab_mask] < 0) or np.any(
            labels[lab_mask] >= self.label_space.num_known
        ):
            raise ValueError("labeled rows must carry a known-category label")
        names = (
            tuple(range(k)) if self.category_names is None else tuple(self.category_names)
        )
        if len(names) != k:
            raise ValueError("category_names must have one entry per category")
        for arr in (feats, labels, split, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "category_names", names)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def indices(self, tag):
        """Row indices carrying the given split tag."""
        if tag not in _VALID_SPLITS:
            raise ValueError(f"invalid split tag {tag!r}")
        return np.flatnonzero(self.split == tag)


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian-mixture generator settings.

    `center_separation` is the minimum pairwise distance between cluster
    means, measured in units of `within_std`.
    """

    num_categories: int
    dim: int
    points_per_category: int
    center_separation: float = 6.0
    within_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_categories < 1:
            raise ValueError("num_categories must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.points_per_category < 2:
            raise ValueError("points_per_category must be >= 2")
        if self.center_separation <= 0:
            raise ValueError("center_separation must be positive")
        if self.within_std <= 0:
            raise ValueError("within_std must be positive")


def _place_means(cfg, rng, max_attempts=10000):
    # Rejection sampling on a hypercube of side 10 * separation * std.
    min_dist = cfg.center_separation * cfg.within_std
    half = 5.0 * min_dist
    means = []
    attempts = 0
    while len(means) < cfg.num_categories:
        if attempts >= max_attempts:
            raise ValueError(
                f"could not place {cfg.num_categories} means with separation "
                f"{cfg.center_separation} in {cfg.dim} dimensions"
            )
        candidate = rng.uniform(-half, half, size=cfg.dim)
        attempts += 1
        if all(np.linalg.norm(candidate - m) >= min_dist for m in means):
            means.append(candidate)
    return np.array(means)


def generate_synthetic(cfg):
    """Sample an isotropic Gaussian mixture dataset, deterministic in the seed.

    All rows are tagged unlabeled and keep their generating category as the
    (hidden) label; apply `split_dataset` to obtain a discovery split.
    """
    rng = np.random.default_rng(cfg.seed)
    means = _place_means(cfg, rng)
    blocks = []
    labels = []
    for c in range(cfg.num_categories):
        pts = means[c] + cfg.within_std * rng.standard_normal(
            (cfg.points_per_category, cfg.dim)
        )
        blocks.append(pts)
        labels.extend([c] * cfg.points_per_category)
    features = np.vstack(blocks).astype(np.float32)
    n = features.shape[0]
    return EmbeddingDataset(
        features=features,
        labels=np.array(labels, dtype=np.int64),
        split=np.full(n, SPLIT_UNLABELED),
        label_space=LabelSpace(num_known=cfg.num_categories, num_novel=0),
        ids=np.arange(n, dtype=np.uint32),
    )


def split_dataset(ds, labeled_fraction, known_category_ratio, test_fraction, seed):
    """Produce a discovery split: choose known categories, tag rows L/U/T.

    ceil(ratio * K) categories are drawn at random as known and re-indexed to
    the prefix 0..M-1 (ascending original id); the rest become novel ids
    M..K-1. Per category, `test_fraction` of rows is reserved for test; of the
    remaining known-category rows, `labeled_fraction` is tagged labeled.
    Splits are stratified per category. Deterministic given the seed.
    """
    if not (0.0 < labeled_fraction < 1.0):
        raise ValueError("labeled_fraction must lie in (0, 1)")
    if not (0.0 < known_category_ratio <= 1.0):
        raise ValueError("known_category_ratio must lie in (0, 1]")
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must lie in (0, 1)")
    if np.any(ds.labels < 0):
        raise ValueError("split_dataset requires ground-truth labels for all rows")

    k = ds.label_space.total
    m = int(np.ceil(known_category_ratio * k))
    if m < 1:
        raise ValueError("known_category_ratio selects no known categories")
    if m >= k:
        raise ValueError("no novel categories would remain; need at least one")

    rng = np.random.default_rng(seed)
    known_orig = np.sort(rng.permutation(k)[:m])
    novel_orig = np.setdiff1d(np.arange(k), known_orig)
    order = np.concatenate([known_orig, novel_orig])
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)

    new_labels = remap[ds.labels]
    new_split = np.full(ds.n, SPLIT_UNLABELED)
    for internal in range(k):
        rows = np.flatnonzero(new_labels == internal)
        if rows.size == 0:
            raise ValueError(f"category {int(order[internal])} has no rows")
        perm = rng.permutation(rows)
        n_test = int(round(test_fraction * rows.size))
        test_rows = perm[:n_test]
        train_rows = perm[n_test:]
        new_split[test_rows] = SPLIT_TEST
        if internal < m:
            n_lab = int(round(labeled_fraction * train_rows.size))
            if n_lab == 0:
                raise ValueError(
                    f"known category {int(order[internal])} received no labeled rows"
                )
            new_split[train_rows[:n_lab]] = SPLIT_LABELED

    return EmbeddingDataset(
        features=ds.features,
        labels=new_labels,
        split=new_split,
        label_space=LabelSpace(num_known=m, num_novel=k - m),
        ids=ds.ids,
        category_names=tuple(int(ds.category_names[o]) for o in order),
    )


def _format_feature(x):
    # %.9g round-trips float32 exactly.
    return "%.9g" % float(x)


def save_dataset(ds, path, format=None):
    """Write a dataset in CSV or binary form; format inferred from extension."""
    fmt = _resolve_format(path, format)
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(
                f"{_CSV_MAGIC} d={ds.dim} M={ds.label_space.num_known} "
                f"N={ds.label_space.num_novel}\n"
            )
            for i in range(ds.n):
                label = "?" if ds.labels[i] < 0 else str(int(ds.labels[i]))
                feats = ",".join(_format_feature(v) for v in ds.features[i])
                fh.write(f"{int(ds.ids[i])},{ds.split[i]},{label},{feats}\n")
    else:
        with open(path, "wb") as fh:
            fh.write(_BIN_MAGIC)
            fh.write(
                struct.pack(
                    "<IIII",
                    ds.n,
                    ds.dim,
                    ds.label_space.num_known,
                    ds.label_space.num_novel,
                )
            )
            for i in range(ds.n):
                fh.write(
                    struct.pack(
                        "<IBi", int(ds.ids[i]), ord(ds.split[i]), int(ds.labels[i])
                    )
                )
                fh.write(ds.features[i].astype("<f4").tobytes())


def load_dataset(path, format=None):
    """Read a dataset written by `save_dataset`. Rows keep file order."""
    fmt = _resolve_format(path, format)
    return _load_csv(path) if fmt == "csv" else _load_binary(path)


def _resolve_format(path, format):
    if format is not None:
        if format not in ("csv", "binary"):
            raise ValueError(f"unknown format {format!r}")
        return format
    return "csv" if str(path).endswith(".csv") else "binary"


def _parse_header(line):
    parts = line.strip().split()
    if " ".join(parts[:2]) != _CSV_MAGIC:
        raise ValueError("missing #sdc-embeddings v1 header")
    fields = {}
    for tok in parts[2:]:
        key, _, val = tok.partition("=")
        fields[key] = int(val)
    for key in ("d", "M", "N"):
        if key not in fields:
            raise ValueError(f"header missing {key}=")
    return fields["d"], fields["M"], fields["N"]


def _load_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("empty file")
    d, m, n_novel = _parse_header(lines[0])
    k = m + n_novel
    ids, splits, labels, rows = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split(",")
        if len(cols) != 3 + d:
            raise ValueError(
                f"line {lineno}: expected {3 + d} columns, got {len(cols)}"
            )
        try:
            ids.append(int(cols[0]))
        except ValueError:
            raise ValueError(f"line {lineno}: bad id {cols[0]!r}") from None
        if cols[1] not in _VALID_SPLITS:
            raise ValueError(f"line {lineno}: bad split tag {cols[1]!r}")
        splits.append(cols[1])
        if cols[2] == "?":
            labels.append(-1)
        else:
            try:
                label = int(cols[2])
            except ValueError:
                raise ValueError(f"line {lineno}: bad label {cols[2]!r}") from None
            if label >= k:
                raise ValueError(f"line {lineno}: label {label} out of range (K={k})")
            labels.append(label)
        try:
            rows.append([float(v) for v in cols[3:]])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric feature") from None
    if not rows:
        raise ValueError("no instances")
    features = np.array(rows, dtype=np.float32)
    as_finite_array(features, name="features")
    return EmbeddingDataset(
        features=features,
        labels=np.array(labels, dtype=np.int64),
        split=np.array(splits),
        label_space=LabelSpace(num_known=m, num_novel=n_novel),
        ids=np.array(ids, dtype=np.uint32),
    )


def _load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _BIN_MAGIC:
        raise ValueError("missing SDC1 magic bytes")
    if len(blob) < 20:
        raise ValueError("truncated header")
    n, d, m, n_novel = struct.unpack("<IIII", blob[4:20])
    if n == 0:
        raise ValueError("no instances")
    k = m + n_novel
    record = 4 + 1 + 4 + 4 * d
    expected = 20 + n * record
    if len(blob) != expected:
        raise ValueError(f"expected {expected} bytes, got {len(blob)}")
    ids = np.empty(n, dtype=np.uint32)
    splits = np.empty(n, dtype="<U1")
    labels = np.empty(n, dtype=np.int64)
    features = np.empty((n, d), dtype=np.float32)
    off = 20
    for i in range(n):
        rid, tag, label = struct.unpack_from("<IBi", blob, off)
        off += 9
        split = chr(tag)
        if split not in _VALID_SPLITS:
            raise ValueError(f"record {i}: bad split byte {tag}")
        if label >= k:
            raise ValueError(f"record {i}: label {label} out of range (K={k})")
        ids[i] = rid
        splits[i] = split
        labels[i] = label
        features[i] = np.frombuffer(blob, dtype="<f4", count=d, offset=off)
        off += 4 * d
    as_finite_array(features, name="features")
    return EmbeddingDataset(
        features=features,
        labels=labels,
        split=splits,
        label_space=LabelSpace(num_known=m, num_novel=n_novel),
        ids=ids,
    )
