"""End-to-end discovery: pre-train, initialize, calibrate, pseudo-label, train.

The flow on a dataset with labeled/unlabeled/test splits:

1. pre-train the biased model with CE on the labeled rows, then freeze it;
2. KMeans the biased features of the unlabeled rows, align cluster centers
   to the labeled class centroids, and initialize the trainable classifier
   with the resulting unit-norm prototypes;
3. cache biased logits/entropies and the transfer matrix;
4. each step: calibrate the current logits of an unlabeled batch, solve the
   balanced transport problem for hard pseudo labels, and take an AdamW
   step on  lambda1 * CE(original logits, pseudo)  +  (1 - lambda1) *
   CE(labeled logits, truth)  +  lambda2 * NT-Xent over dropout views;
5. evaluate on the test split (classifier or clustering mode).

Pseudo labels always come from calibrated logits, while the CE term is
applied to the original logits. Ablation switches disable individual
calibration pieces; everything is deterministic given (data, config, seed).
"""

import warnings
from dataclasses import dataclass, fields, replace

import numpy as np

from .calibration import build_state, calibrate, compute_alpha, transfer_matrix
from .clustering import align_prototypes, kmeans
from .data import SPLIT_LABELED, SPLIT_TEST, SPLIT_UNLABELED, LabelSpace
from .evaluation import compute_metrics, hungarian_map
from .model import (
    AdamW,
    EncoderConfig,
    LossReport,
    ce_loss,
    contrastive_loss,
    init_trainable,
    pretrain_biased,
)
from .numerics import l2_normalize_rows
from .transport import sinkhorn_pseudo_labels

__all__ = [
    "PipelineConfig",
    "ABLATION_ARMS",
    "load_config",
    "run_discovery",
    "infer",
]

ABLATION_ARMS = {
    "full": {},
    "no-cbm": {"disable_cbm": True},
    "no-ccm": {"disable_ccm": True},
    "no-weighting": {"disable_weighting": True},
    "no-la": {"disable_logit_adjustment": True},
    "no-contrastive": {"disable_contrastive": True},
}


@dataclass(frozen=True)
class PipelineConfig:
    """Hyper-parameters and ablation switches for one discovery run."""

    beta: float = 0.4
    lambda1_start: float = 0.6
    lambda1_end: float = 0.7
    lambda2: float = 0.01
    epochs_pretrain: int = 60
    epochs_train: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.01
    epsilon_ot: float = 0.05
    sinkhorn_max_iters: int = 500
    sinkhorn_tol: float = 1e-6
    temperature: float = 0.07
    seed: int = 0
    encoder: str = "hidden"
    hidden_dim: int = None
    dropout_rate: float = 0.1
    k_override: int = None
    refresh_transfer: bool = False
    disable_cbm: bool = False
    disable_ccm: bool = False
    disable_weighting: bool = False
    disable_logit_adjustment: bool = False
    disable_contrastive: bool = False

    def __post_init__(self):
        if not (0.0 <= self.lambda1_start <= self.lambda1_end <= 1.0):
            raise ValueError("need 0 <= lambda1_start <= lambda1_end <= 1")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_pretrain < 0 or self.epochs_train < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.epsilon_ot <= 0:
            raise ValueError("epsilon_ot must be positive")

    def encoder_config(self):
        return EncoderConfig(
            kind=self.encoder,
            hidden_dim=self.hidden_dim,
            dropout_rate=self.dropout_rate,
        )

    def lambda1_at(self, epoch):
        """Linear ramp from lambda1_start to lambda1_end across training."""
        if self.epochs_train <= 1:
            return self.lambda1_start
        frac = min(max(epoch / (self.epochs_train - 1), 0.0), 1.0)
        return self.lambda1_start + (self.lambda1_end - self.lambda1_start) * frac


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False}


def load_config(path):
    """Parse a flat `key = value` config file into a PipelineConfig.

    Lines starting with # and blank lines are ignored; keys must match the
    PipelineConfig field names. `none` clears an optional field.
    """
    values = {}
    spec = {f.name: f for f in fields(PipelineConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected key = value")
            key = key.strip()
            val = val.strip()
            if key not in spec:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse_config_value(key, val)
    return PipelineConfig(**values)


def _parse_config_value(key, val):
    defaults = PipelineConfig()
    current = getattr(defaults, key)
    if val.lower() == "none":
        return None
    if isinstance(current, bool):
        if val.lower() not in _BOOL_STRINGS:
            raise ValueError(f"bad boolean {val!r} for {key}")
        return _BOOL_STRINGS[val.lower()]
    if isinstance(current, int):
        return int(val)
    if isinstance(current, float):
        return float(val)
    if key in ("hidden_dim", "k_override"):
        return int(val)
    return val


def _labeled_batches(n_labeled, batch_size, rng):
    """Endless round-robin over labeled indices, reshuffled when exhausted."""
    order = rng.permutation(n_labeled)
    pos = 0
    while True:
        if pos + batch_size > n_labeled:
            order = rng.permutation(n_labeled)
            pos = 0
        take = min(batch_size, n_labeled)
        yield order[pos : pos + take]
        pos += take


def run_discovery(data, cfg, eval_mode="clustering"):
    """Run the full discovery procedure on a split dataset.

    Returns (trained model, metrics report, per-epoch training log). The
    report is None when the dataset has no test rows. The log is a list of
    dicts with per-epoch losses, the lambda1 value, and the pseudo-label
    accuracy against hidden labels (None when no hidden labels exist).
    """
    if eval_mode not in ("classifier", "clustering"):
        raise ValueError(f"unknown eval mode {eval_mode!r}")
    lab_idx = data.indices(SPLIT_LABELED)
    unl_idx = data.indices(SPLIT_UNLABELED)
    if lab_idx.size == 0 or unl_idx.size == 0:
        raise ValueError("discovery needs non-empty labeled and unlabeled splits")

    m = data.label_space.num_known
    k = cfg.k_override if cfg.k_override is not None else data.label_space.total
    if k <= m:
        raise ValueError("total categories must exceed the known count")
    if cfg.batch_size < k:
        warnings.warn(
            f"batch_size {cfg.batch_size} below K={k}; balanced pseudo-labels "
            "cannot cover every category in a batch",
            stacklevel=2,
        )

    biased = pretrain_biased(
        data,
        epochs=cfg.epochs_pretrain,
        lr=cfg.lr,
        seed=cfg.seed,
        encoder=cfg.encoder_config(),
        batch_size=cfg.batch_size,
        weight_decay=cfg.weight_decay,
    )

    X_lab = data.features[lab_idx].astype(np.float64)
    y_lab = data.labels[lab_idx]
    X_unl = data.features[unl_idx].astype(np.float64)
    unl_gt = data.labels[unl_idx]

    feats_unl, _ = biased.forward(X_unl)
    feats_lab, _ = biased.forward(X_lab)
    centroids = np.vstack([feats_lab[y_lab == c].mean(axis=0) for c in range(m)])
    prototypes = align_prototypes(
        kmeans(feats_unl, k, seed=cfg.seed).centers, centroids
    )
    model = init_trainable(biased, prototypes)
    state = build_state(biased, data, prototypes, beta=cfg.beta)
    transfer = state.transfer

    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    log = []
    k_eval = max(k, data.label_space.total)
    have_hidden = np.all(unl_gt >= 0)

    for epoch in range(cfg.epochs_train):
        lam1 = cfg.lambda1_at(epoch)
        if cfg.refresh_transfer:
            transfer = transfer_matrix(l2_normalize_rows(model.params["cls_w"]), m)
        order = rng.permutation(unl_idx.size)
        lab_stream = _labeled_batches(lab_idx.size, cfg.batch_size, rng)
        sup_sum = cont_sum = total_sum = 0.0
        n_batches = 0
        epoch_pseudo = np.empty(unl_idx.size, dtype=np.int64)

        for start in range(0, unl_idx.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            lab_batch = next(lab_stream)
            report, pseudo = _train_step(
                model, opt, cfg, lam1, transfer, state,
                X_unl[batch], batch, X_lab[lab_batch], y_lab[lab_batch], rng,
                first_batch=start == 0,
            )
            if not np.isfinite(report.total_loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            epoch_pseudo[batch] = pseudo
            sup_sum += report.sup_loss
            cont_sum += report.contrastive_loss
            total_sum += report.total_loss
            n_batches += 1

        acc_all = acc_novel = None
        if have_hidden:
            acc_all, acc_novel = _pseudo_label_accuracy(epoch_pseudo, unl_gt, m, k_eval)
        log.append(
            {
                "epoch": epoch,
                "sup_loss": sup_sum / n_batches,
                "cont_loss": cont_sum / n_batches,
                "total_loss": total_sum / n_batches,
                "pseudo_label_acc_all": acc_all,
                "pseudo_label_acc_novel": acc_novel,
                "lambda1": lam1,
            }
        )

    report = None
    test_idx = data.indices(SPLIT_TEST)
    if test_idx.size > 0:
        report = _evaluate(model, data, test_idx, eval_mode, k_eval, cfg.seed)
    return model, report, log


def _train_step(
    model, opt, cfg, lam1, transfer, state,
    Xu, unl_positions, Xl, yl, rng, first_batch=False,
):
    """One optimization step; returns the loss report and the batch's
    hard pseudo labels."""
    feat_u1, logits_u, cache_u1 = model.forward_cache(Xu, train_mode=True, rng=rng)
    feat_l1, logits_l, cache_l1 = model.forward_cache(Xl, train_mode=True, rng=rng)

    bias_logits = state.biased_logits[unl_positions]
    if cfg.disable_logit_adjustment:
        alpha = np.zeros(len(unl_positions))
    elif cfg.disable_weighting:
        alpha = np.full(len(unl_positions), cfg.beta / 2.0)
    else:
        alpha = compute_alpha(state.entropies[unl_positions], cfg.beta)
    calibrated = calibrate(
        logits_u,
        bias_logits,
        alpha,
        transfer,
        apply_cbm=not (cfg.disable_cbm or cfg.disable_logit_adjustment),
        apply_ccm=not (cfg.disable_ccm or cfg.disable_logit_adjustment),
    )
    if first_batch and cfg.disable_cbm and cfg.disable_ccm:
        assert np.array_equal(calibrated, logits_u)

    plan = sinkhorn_pseudo_labels(
        calibrated,
        epsilon=cfg.epsilon_ot,
        max_iters=cfg.sinkhorn_max_iters,
        tol=cfg.sinkhorn_tol,
    )
    pseudo = plan.pseudo_labels

    loss_u, d_logits_u = ce_loss(logits_u, pseudo)
    loss_l, d_logits_l = ce_loss(logits_l, yl)
    sup = lam1 * loss_u + (1.0 - lam1) * loss_l

    cont = 0.0
    g_u1 = g_u2 = g_l1 = g_l2 = None
    cache_u2 = cache_l2 = None
    bu = Xu.shape[0]
    if not cfg.disable_contrastive and cfg.lambda2 > 0 and bu + Xl.shape[0] >= 2:
        _, _, cache_u2 = model.forward_cache(Xu, train_mode=True, rng=rng)
        _, _, cache_l2 = model.forward_cache(Xl, train_mode=True, rng=rng)
        v1 = np.vstack([cache_u1["features"], cache_l1["features"]])
        v2 = np.vstack([cache_u2["features"], cache_l2["features"]])
        cont, (g1, g2) = contrastive_loss(v1, v2, temperature=cfg.temperature)
        g_u1, g_l1 = g1[:bu], g1[bu:]
        g_u2, g_l2 = g2[:bu], g2[bu:]

    total = sup + cfg.lambda2 * cont

    grads = _sum_grads(
        model.backward(
            cache_u1,
            d_logits=lam1 * d_logits_u,
            d_features=None if g_u1 is None else cfg.lambda2 * g_u1,
        ),
        model.backward(
            cache_l1,
            d_logits=(1.0 - lam1) * d_logits_l,
            d_features=None if g_l1 is None else cfg.lambda2 * g_l1,
        ),
        None
        if cache_u2 is None
        else model.backward(cache_u2, d_features=cfg.lambda2 * g_u2),
        None
        if cache_l2 is None
        else model.backward(cache_l2, d_features=cfg.lambda2 * g_l2),
    )
    opt.step(model, grads)

    grad_norm = float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))
    return LossReport(sup, cont, total, grad_norm), pseudo


def _sum_grads(*grad_dicts):
    out = {}
    for grads in grad_dicts:
        if grads is None:
            continue
        for name, g in grads.items():
            out[name] = out.get(name, 0.0) + g
    return out


def _pseudo_label_accuracy(pseudo, gt, m, k):
    """Hungarian-mapped accuracy of pseudo labels, overall and on rows whose
    hidden category is novel."""
    mapping = hungarian_map(pseudo, gt, k)
    mapped = mapping[pseudo]
    acc_all = 100.0 * float(np.mean(mapped == gt))
    novel_rows = gt >= m
    acc_novel = (
        100.0 * float(np.mean(mapped[novel_rows] == gt[novel_rows]))
        if novel_rows.any()
        else None
    )
    return acc_all, acc_novel


def _evaluate(model, data, test_idx, eval_mode, k_eval, seed):
    X_test = data.features[test_idx].astype(np.float64)
    gts = data.labels[test_idx]
    space = LabelSpace(
        num_known=data.label_space.num_known,
        num_novel=k_eval - data.label_space.num_known,
    )
    preds = infer(model, X_test, mode=eval_mode, seed=seed)
    if eval_mode == "clustering":
        mapping = hungarian_map(preds, gts, k_eval)
    else:
        mapping = np.arange(k_eval)
    return compute_metrics(preds, gts, space, mapping=mapping, mode=eval_mode)


def infer(model, X, mode="classifier", seed=0):
    """Predict a category per row.

    classifier mode takes the argmax of the classifier logits and works one
    instance at a time; clustering mode runs KMeans with k equal to the
    model's category count over the whole batch (indices then need a
    Hungarian map for scoring).
    """
    X = np.asarray(X, dtype=np.float64)
    if mode == "classifier":
        _, logits = model.forward(X)
        return logits.argmax(axis=1)
    if mode == "clustering":
        k = model.num_classes
        if X.shape[0] < k:
            raise ValueError(f"clustering inference needs at least {k} rows")
        feats, _ = model.forward(X)
        return kmeans(feats, k, seed=seed).assignments
    raise ValueError(f"unknown inference mode {mode!r}")


def make_ablation_config(cfg, arm):
    """Apply a named ablation arm's switches to a config."""
    if arm not in ABLATION_ARMS:
        raise ValueError(f"unknown ablation arm {arm!r}")
    return replace(cfg, **ABLATION_ARMS[arm])
