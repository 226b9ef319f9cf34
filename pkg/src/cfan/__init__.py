"""Component-wise feature aggregation for set/template matching.

A template (set of observations of one subject) is fused into a single
fixed-length vector. The trainable path predicts a quality value per
instance per component from each instance's feature map, softmax-
normalizes the qualities across the set and takes the weighted sum; the
baselines are plain averaging and a per-instance scalar variant. Training
minimizes a template triplet loss with hand-derived gradients; synthetic
heteroscedastic data with an analytic inverse-variance oracle provides
ground truth to measure against.
"""

from .aggregation import (
    AggregatedRep,
    FeatureInstance,
    QualityHead,
    Template,
    aggregate_template,
    pool_average,
    pool_cfan,
    pool_cfan_backward,
    pool_instance,
    quality_forward,
)
from .backend import active_backend
from .core import BatchNormParams, LinearParams, cosine_similarity, squared_euclidean
from .evaluation import (
    EvalReport,
    closed_set_ir,
    open_set_tpir,
    pairwise_protocol,
    score_matrix,
    verification_tar,
)
from .synthetic import (
    NoiseModelConfig,
    SyntheticDataset,
    generate,
    intra_class_correlation,
    oracle_pool,
    oracle_weights,
)
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AggregatedRep",
    "BatchNormParams",
    "EvalReport",
    "FeatureInstance",
    "LinearParams",
    "NoiseModelConfig",
    "QualityHead",
    "SyntheticDataset",
    "Template",
    "TrainConfig",
    "active_backend",
    "aggregate_template",
    "closed_set_ir",
    "cosine_similarity",
    "generate",
    "intra_class_correlation",
    "open_set_tpir",
    "oracle_pool",
    "oracle_weights",
    "pairwise_protocol",
    "pool_average",
    "pool_cfan",
    "pool_cfan_backward",
    "pool_instance",
    "quality_forward",
    "score_matrix",
    "squared_euclidean",
    "train",
    "verification_tar",
    "__version__",
]
