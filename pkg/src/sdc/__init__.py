"""Self-debiasing calibration for generalized category discovery.

Discovers both known and novel categories in unlabeled embedding vectors,
using a frozen classifier pre-trained on the known categories to calibrate
the logits of a trainable prototype classifier, and balanced optimal
transport to turn the calibrated logits into pseudo labels.
"""

from .calibration import CalibrationState, build_state, calibrate, compute_alpha
from .clustering import Assignment, KMeansResult, align_prototypes, estimate_k, hungarian, kmeans
from .data import (
    EmbeddingDataset,
    LabelSpace,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .estimator import SDCEstimator
from .evaluation import MetricsReport, compute_metrics, entropy_report, h_score, hungarian_map
from .model import (
    AdamW,
    BiasedModel,
    EncoderConfig,
    TrainableModel,
    ce_loss,
    contrastive_loss,
    init_trainable,
    load_model,
    pretrain_biased,
    save_model,
)
from .numerics import entropy, finite_diff_check, l2_normalize, softmax
from .pipeline import PipelineConfig, infer, load_config, run_discovery
from .transport import TransportPlan, sinkhorn_pseudo_labels

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "Assignment",
    "BiasedModel",
    "CalibrationState",
    "EmbeddingDataset",
    "EncoderConfig",
    "KMeansResult",
    "LabelSpace",
    "MetricsReport",
    "PipelineConfig",
    "SDCEstimator",
    "SyntheticConfig",
    "TrainableModel",
    "TransportPlan",
    "align_prototypes",
    "build_state",
    "calibrate",
    "ce_loss",
    "compute_alpha",
    "compute_metrics",
    "contrastive_loss",
    "entropy",
    "entropy_report",
    "estimate_k",
    "finite_diff_check",
    "generate_synthetic",
    "h_score",
    "hungarian",
    "hungarian_map",
    "infer",
    "init_trainable",
    "kmeans",
    "l2_normalize",
    "load_config",
    "load_dataset",
    "load_model",
    "pretrain_biased",
    "run_discovery",
    "save_dataset",
    "save_model",
    "sinkhorn_pseudo_labels",
    "softmax",
    "split_dataset",
]
