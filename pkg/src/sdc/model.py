"""Encoder+classifier pairs, losses with analytic gradients, and AdamW.

Two model roles share one architecture: a frozen biased model whose
classifier covers only the known categories, and a trainable model whose
classifier has one prototype row per category (known prefix, novel suffix).
The encoder is either the identity or a single tanh layer; feature dropout
in train mode doubles as the augmentation for the contrastive loss.

Classifiers carry no bias term, so logits are feature/prototype dot
products. All computation is float64 numpy; gradients are hand-derived and
validated against central differences.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .data import SPLIT_LABELED
from .numerics import check_matrix

__all__ = [
    "EncoderConfig",
    "BiasedModel",
    "TrainableModel",
    "LossReport",
    "init_params",
    "forward",
    "ce_loss",
    "contrastive_loss",
    "AdamW",
    "pretrain_biased",
    "init_trainable",
    "save_model",
    "load_model",
]

ENCODER_KINDS = ("identity", "hidden")


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder architecture: identity passthrough or one tanh layer."""

    kind: str = "hidden"
    hidden_dim: int = None  # None means same width as the input
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")

    def feature_dim(self, d_in):
        if self.kind == "identity":
            return d_in
        return self.hidden_dim if self.hidden_dim is not None else d_in


def init_params(encoder, d_in, num_classes, rng):
    """Random initial parameters; classifier weights are small so initial
    logits are near zero and CE starts near log(num_classes)."""
    d_feat = encoder.feature_dim(d_in)
    params = {}
    if encoder.kind == "hidden":
        params["enc_w"] = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_feat))
        params["enc_b"] = np.zeros(d_feat)
    params["cls_w"] = rng.normal(0.0, 0.01, size=(num_classes, d_feat))
    return params


class _Network:
    """Shared encoder+classifier machinery for both model roles."""

    def __init__(self, params, encoder, d_in):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.encoder = encoder
        self.d_in = d_in
        if encoder.kind == "hidden" and "enc_w" not in self.params:
            raise ValueError("hidden encoder requires enc_w/enc_b parameters")

    @property
    def feature_dim(self):
        return self.encoder.feature_dim(self.d_in)

    @property
    def num_classes(self):
        return self.params["cls_w"].shape[0]

    def draw_dropout_mask(self, batch_size, rng):
        """Bernoulli keep-mask for one forward pass (None when inactive).

        A row that would drop every unit is kept whole instead; a zero
        feature row would break the normalized contrastive loss.
        """
        rate = self.encoder.dropout_rate
        if rate == 0.0:
            return None
        mask = (rng.random((batch_size, self.feature_dim)) >= rate).astype(np.float64)
        dead = mask.sum(axis=1) == 0
        mask[dead] = 1.0
        return mask

    def forward(self, X, train_mode=False, rng=None, dropout_mask=None):
        """Compute (features, logits). Inference mode applies no dropout."""
        feats, logits, _ = self.forward_cache(
            X, train_mode=train_mode, rng=rng, dropout_mask=dropout_mask
        )
        return feats, logits

    def forward_cache(self, X, train_mode=False, rng=None, dropout_mask=None):
        X = check_matrix(X, cols=self.d_in, name="X")
        if self.encoder.kind == "hidden":
            pre = X @ self.params["enc_w"] + self.params["enc_b"]
            hidden = np.tanh(pre)
        else:
            hidden = X
        mask = None
        if train_mode and self.encoder.dropout_rate > 0.0:
            if dropout_mask is not None:
                mask = np.asarray(dropout_mask, dtype=np.float64)
            else:
                if rng is None:
                    raise ValueError("train_mode forward needs an rng or a mask")
                mask = self.draw_dropout_mask(X.shape[0], rng)
        keep = 1.0 - self.encoder.dropout_rate
        features = hidden if mask is None else hidden * mask / keep
        logits = features @ self.params["cls_w"].T
        cache = {"X": X, "hidden": hidden, "mask": mask, "features": features}
        return features, logits, cache

    def backward(self, cache, d_logits=None, d_features=None):
        """Gradients of a scalar loss given its feature/logit gradients."""
        features = cache["features"]
        grads = {}
        d_feat = np.zeros_like(features)
        if d_logits is not None:
            grads["cls_w"] = d_logits.T @ features
            d_feat += d_logits @ self.params["cls_w"]
        else:
            grads["cls_w"] = np.zeros_like(self.params["cls_w"])
        if d_features is not None:
            d_feat += d_features
        if self.encoder.kind == "hidden":
            if cache["mask"] is not None:
                d_feat = d_feat * cache["mask"] / (1.0 - self.encoder.dropout_rate)
            d_pre = d_feat * (1.0 - cache["hidden"] ** 2)
            grads["enc_w"] = cache["X"].T @ d_pre
            grads["enc_b"] = d_pre.sum(axis=0)
        return grads

    _PARAM_ORDER = ("enc_w", "enc_b", "cls_w")

    def param_vector(self):
        return np.concatenate(
            [self.params[k].ravel() for k in self._PARAM_ORDER if k in self.params]
        )

    def set_param_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        off = 0
        for k in self._PARAM_ORDER:
            if k in self.params:
                size = self.params[k].size
                self.params[k] = vec[off : off + size].reshape(self.params[k].shape)
                off += size
        if off != vec.size:
            raise ValueError("parameter vector has the wrong length")

    def grad_vector(self, grads):
        return np.concatenate(
            [grads[k].ravel() for k in self._PARAM_ORDER if k in self.params]
        )


class BiasedModel(_Network):
    """Classifier over known categories only; frozen after pre-training."""

    def __init__(self, params, encoder, d_in, frozen=True):
        super().__init__(params, encoder, d_in)
        self.frozen = frozen


class TrainableModel(_Network):
    """Classifier with one prototype row per category (K rows)."""

    @property
    def feature_dropout_rate(self):
        return self.encoder.dropout_rate


@dataclass
class LossReport:
    sup_loss: float
    contrastive_loss: float
    total_loss: float
    gradient_norm: float


def forward(model, X, train_mode=False, rng=None):
    """Module-level forward: logits are features times classifier rows."""
    return model.forward(X, train_mode=train_mode, rng=rng)


def ce_loss(logits, targets):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = check_matrix(logits, name="logits")
    targets = np.asarray(targets, dtype=np.int64)
    b, c = logits.shape
    if targets.shape != (b,):
        raise ValueError("targets must have one entry per logit row")
    if np.any(targets < 0) or np.any(targets >= c):
        raise ValueError("targets out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), targets]))
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(b), targets] -= 1.0
    return loss, grad / b


def contrastive_loss(features_v1, features_v2, temperature=0.07):
    """NT-Xent over the 2B views of a batch.

    Each anchor's positive is the other view of the same instance; the
    denominator ranges over the remaining 2B-1 views. Features are
    unit-normalized internally, and the returned gradients are with respect
    to the raw (pre-normalization) inputs.
    """
    f1 = check_matrix(features_v1, name="features_v1")
    f2 = check_matrix(features_v2, cols=f1.shape[1], name="features_v2")
    b = f1.shape[0]
    if f2.shape[0] != b:
        raise ValueError("views must have the same batch size")
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    raw = np.vstack([f1, f2])
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize zero feature rows")
    z = raw / norms
    n = 2 * b
    sim = z @ z.T / temperature
    np.fill_diagonal(sim, -np.inf)
    pos = np.concatenate([np.arange(b, n), np.arange(0, b)])

    shifted = sim - sim.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    log_z_row = np.log(exps.sum(axis=1))
    loss = float(np.mean(log_z_row - shifted[np.arange(n), pos]))

    probs = exps / exps.sum(axis=1, keepdims=True)
    d_sim = probs
    d_sim[np.arange(n), pos] -= 1.0
    d_sim /= n
    dz = (d_sim + d_sim.T) @ z / temperature
    # Back through row normalization: d_raw = (dz - z (z . dz)) / ||raw||.
    d_raw = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norms
    return loss, (d_raw[:b], d_raw[b:])


class AdamW:
    """Adam with decoupled weight decay; bias-corrected, moments start at zero.

    Weight decay is not applied to bias vectors (enc_b).
    """

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads):
        """Apply one update in place to model.params."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for {name!r}")
        self.t += 1
        for name, p in model.params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and name != "enc_b":
                update = update + self.weight_decay * p
            p -= self.lr * update
        return model


def pretrain_biased(
    labeled,
    epochs,
    lr,
    seed,
    encoder=None,
    batch_size=128,
    weight_decay=0.01,
):
    """Train the biased encoder+classifier with CE on the labeled split.

    Returns the frozen model. epochs=0 freezes the random initialization.
    Deterministic given the seed.
    """
    if encoder is None:
        encoder = EncoderConfig()
    idx = labeled.indices(SPLIT_LABELED)
    if idx.size == 0:
        raise ValueError("labeled split is empty")
    X = labeled.features[idx].astype(np.float64)
    y = labeled.labels[idx]
    m = labeled.label_space.num_known
    rng = np.random.default_rng(seed)
    model = BiasedModel(
        init_params(encoder, X.shape[1], m, rng), encoder, X.shape[1], frozen=False
    )
    opt = AdamW(lr=lr, weight_decay=weight_decay)
    for epoch in range(epochs):
        order = rng.permutation(idx.size)
        for start in range(0, idx.size, batch_size):
            batch = order[start : start + batch_size]
            _, logits, cache = model.forward_cache(X[batch], train_mode=True, rng=rng)
            loss, d_logits = ce_loss(logits, y[batch])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"pre-training diverged at epoch {epoch}, batch {start // batch_size}"
                )
            opt.step(model, model.backward(cache, d_logits=d_logits))
    model.frozen = True
    return model


def init_trainable(biased, prototypes):
    """Build the trainable model: encoder copied from the biased one,
    classifier rows set to the aligned unit-norm prototypes."""
    prototypes = check_matrix(prototypes, cols=biased.feature_dim, name="prototypes")
    if prototypes.shape[0] < biased.num_classes:
        raise ValueError("need at least one prototype per known category")
    norms = np.linalg.norm(prototypes, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("prototype rows must be unit-norm")
    params = {k: v.copy() for k, v in biased.params.items()}
    params["cls_w"] = prototypes.copy()
    return TrainableModel(params, biased.encoder, biased.d_in)


_CKPT_MAGIC = b"SDCM"
_CKPT_VERSION = 1


def save_model(model, path):
    """Checkpoint: magic SDCM, version, architecture header, then f32
    parameter blocks in fixed order (encoder weights, encoder bias,
    classifier weights)."""
    kind_code = 0 if model.encoder.kind == "identity" else 1
    hidden = model.feature_dim if kind_code else 0
    frozen = 1 if getattr(model, "frozen", False) else 0
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(
            struct.pack(
                "<IBBIIId",
                _CKPT_VERSION,
                frozen,
                kind_code,
                model.d_in,
                hidden,
                model.num_classes,
                model.encoder.dropout_rate,
            )
        )
        for key in ("enc_w", "enc_b", "cls_w"):
            if key in model.params:
                fh.write(model.params[key].astype("<f4").tobytes())


def load_model(path):
    """Load a checkpoint written by save_model (parameters come back f32)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("missing SDCM magic bytes")
    version, frozen, kind_code, d_in, hidden, n_cls, dropout = struct.unpack_from(
        "<IBBIIId", blob, 4
    )
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    encoder = EncoderConfig(
        kind="identity" if kind_code == 0 else "hidden",
        hidden_dim=None if kind_code == 0 else hidden,
        dropout_rate=dropout,
    )
    off = 4 + struct.calcsize("<IBBIIId")
    params = {}

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += 4 * count
        return arr.astype(np.float64).reshape(shape)

    d_feat = encoder.feature_dim(d_in)
    if encoder.kind == "hidden":
        params["enc_w"] = take((d_in, d_feat))
        params["enc_b"] = take((d_feat,))
    params["cls_w"] = take((n_cls, d_feat))
    if off != len(blob):
        raise ValueError("checkpoint has trailing or missing bytes")
    if frozen:
        return BiasedModel(params, encoder, d_in, frozen=True)
    return TrainableModel(params, encoder, d_in)
