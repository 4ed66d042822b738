"""Scikit-learn style front end for the discovery pipeline.

`SDCEstimator.fit(X, y)` follows the semi-supervised convention: rows with
y >= 0 are labeled instances of known categories, rows with y == -1 are
unlabeled and may belong to novel categories. After fitting, `predict`
classifies new rows online and `transform` exposes the learned features.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array

from .clustering import estimate_k
from .data import EmbeddingDataset, LabelSpace
from .pipeline import PipelineConfig, infer, run_discovery

__all__ = ["SDCEstimator"]


class SDCEstimator(BaseEstimator):
    """Generalized category discovery with self-debiasing calibration.

    Parameters mirror PipelineConfig. `n_classes` is the total category
    count K (known plus novel); when None it is estimated by over-clustering
    with k_max = 2 * number of known classes.

    After `fit`:
        classes_        original labels of the known categories, sorted
        n_classes_      total category count used
        model_          the trained model
        training_log_   per-epoch loss/pseudo-accuracy records

    `predict` returns original labels for known categories and fresh integer
    labels (max(classes_) + 1 + j) for the j-th novel category.
    """

    def __init__(
        self,
        n_classes=None,
        beta=0.4,
        lambda1_start=0.6,
        lambda1_end=0.7,
        lambda2=0.01,
        epochs_pretrain=60,
        epochs_train=30,
        batch_size=128,
        lr=1e-3,
        weight_decay=0.01,
        epsilon_ot=0.05,
        temperature=0.07,
        encoder="hidden",
        hidden_dim=None,
        dropout_rate=0.1,
        random_state=0,
    ):
        self.n_classes = n_classes
        self.beta = beta
        self.lambda1_start = lambda1_start
        self.lambda1_end = lambda1_end
        self.lambda2 = lambda2
        self.epochs_pretrain = epochs_pretrain
        self.epochs_train = epochs_train
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.epsilon_ot = epsilon_ot
        self.temperature = temperature
        self.encoder = encoder
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout_rate
        self.random_state = random_state

    def _config(self):
        return PipelineConfig(
            beta=self.beta,
            lambda1_start=self.lambda1_start,
            lambda1_end=self.lambda1_end,
            lambda2=self.lambda2,
            epochs_pretrain=self.epochs_pretrain,
            epochs_train=self.epochs_train,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            epsilon_ot=self.epsilon_ot,
            temperature=self.temperature,
            seed=self.random_state,
            encoder=self.encoder,
            hidden_dim=self.hidden_dim,
            dropout_rate=self.dropout_rate,
        )

    def fit(self, X, y):
        """Fit on a mix of labeled (y >= 0) and unlabeled (y == -1) rows."""
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one entry per row of X")
        labeled = y >= 0
        if not labeled.any():
            raise ValueError("need at least one labeled row")
        if labeled.all():
            raise ValueError("need at least one unlabeled row")
        self.classes_ = np.unique(y[labeled])
        m = self.classes_.size
        if self.n_classes is not None:
            k = int(self.n_classes)
        else:
            k = estimate_k(
                X[~labeled], k_max=min(2 * m, int(np.sum(~labeled))),
                seed=self.random_state,
            )
            k = max(k, m + 1)
        if k <= m:
            raise ValueError(f"n_classes={k} must exceed the known count {m}")
        self.n_classes_ = k

        to_internal = {orig: i for i, orig in enumerate(self.classes_.tolist())}
        labels = np.full(X.shape[0], -1, dtype=np.int64)
        labels[labeled] = [to_internal[v] for v in y[labeled].tolist()]
        ds = EmbeddingDataset(
            features=X.astype(np.float32),
            labels=labels,
            split=np.where(labeled, "L", "U"),
            label_space=LabelSpace(num_known=m, num_novel=k - m),
        )
        self.model_, _, self.training_log_ = run_discovery(ds, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("estimator is not fitted; call fit first")

    def _to_output_labels(self, internal):
        m = self.classes_.size
        base = int(self.classes_.max()) + 1
        out = np.empty_like(internal)
        known = internal < m
        out[known] = self.classes_[internal[known]]
        out[~known] = base + (internal[~known] - m)
        return out

    def predict(self, X):
        """Online per-instance prediction via the learned classifier."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        return self._to_output_labels(infer(self.model_, X, mode="classifier"))

    def predict_offline(self, X, seed=None):
        """Batch clustering over the learned features; returns raw cluster
        indices (use a Hungarian map against references to score them)."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        return infer(
            self.model_,
            X,
            mode="clustering",
            seed=self.random_state if seed is None else seed,
        )

    def transform(self, X):
        """Encoder features of the fitted model."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        feats, _ = self.model_.forward(X)
        return feats
