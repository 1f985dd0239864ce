"""Weakly supervised bag classification with two-stage instance decorrelation.

Stage 1 trains an instance scorer from bag labels alone and forwards
each bag's most informative instances. Stage 2 maps those instances to a
random-Fourier feature space, learns positive per-instance weights that
minimize off-diagonal correlation (with memory banks extending the
computation beyond one batch), and classifies the reweighted, fused
representation. A synthetic generator with a controllable spurious
feature makes every mechanism testable at desk scale.
"""

__version__ = "0.1.0"

from .aggregate import AggregatorNet, bag_loss
from .bundle import ModelBundle
from .config import RunConfig
from .dataset import (
    Bag,
    BagDataset,
    SyntheticConfig,
    compute_bag_label,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .decorrelate import (
    CorrelationMatrices,
    OptimizeResult,
    WeightState,
    build_correlation_matrices,
    covariance_matrix,
    decorrelation_grad,
    decorrelation_loss,
    inner_product_matrix,
    optimize_weights,
    reweight,
)
from .distill import (
    DistilledSet,
    InstanceDistiller,
    InstanceScorer,
    distillation_loss,
    select_bipolar,
    select_top_k,
)
from .errors import ConfigError, DataError, DecorrMILError, NumericError
from .memory import MemoryBank
from .metrics import (
    CorrelationReport,
    EvalReport,
    correlation_report,
    evaluate_bags,
    roc_auc,
    roi_metrics,
    threshold_metrics,
)
from .pipeline import DecorrMILClassifier
from .rff import RandomFourierMap

__all__ = [
    "AggregatorNet",
    "Bag",
    "BagDataset",
    "ConfigError",
    "CorrelationMatrices",
    "CorrelationReport",
    "DataError",
    "DecorrMILClassifier",
    "DecorrMILError",
    "DistilledSet",
    "EvalReport",
    "InstanceDistiller",
    "InstanceScorer",
    "MemoryBank",
    "ModelBundle",
    "NumericError",
    "OptimizeResult",
    "RandomFourierMap",
    "RunConfig",
    "SyntheticConfig",
    "WeightState",
    "bag_loss",
    "build_correlation_matrices",
    "compute_bag_label",
    "correlation_report",
    "covariance_matrix",
    "decorrelation_grad",
    "decorrelation_loss",
    "distillation_loss",
    "evaluate_bags",
    "generate_synthetic",
    "inner_product_matrix",
    "load_dataset",
    "optimize_weights",
    "reweight",
    "roc_auc",
    "roi_metrics",
    "save_dataset",
    "select_bipolar",
    "select_top_k",
    "threshold_metrics",
]
