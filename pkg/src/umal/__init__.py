"""Conditional density regression with mixtures of asymmetric Laplacians.

Learns the full distribution p(y|x) with a small dense network and a choice
of output heads: single Normal/Laplace, mixture density networks, quantile
regression with tau as an extra input, and the uncountable-mixture head that
scores a Monte Carlo batch of asymmetric-Laplacian components through one
logsumexp likelihood.  Ships the four-region synthetic benchmark, PIT-based
calibration analysis, density-grid export, and a CLI that reproduces the
full model-comparison table.
"""

from .data import (
    Dataset,
    IngestionError,
    Split,
    generate_synthetic,
    load_tabular,
    split_dataset,
    true_cdf,
    true_logpdf,
)
from .dists import ALDComponent, FiniteMixture, ald_cdf, ald_logpdf, ald_quantile
from .eval import (
    CalibrationCurve,
    DensityGrid,
    EvaluationError,
    PredictConfig,
    calibration_curve,
    compute_metrics,
    crossing_report,
    export_densities,
    pit_values,
    predict_density,
    quantile_density,
    test_loglik,
)
from .kernels import active_backend, set_backend
from .losses import (
    TauBatch,
    head_loss,
    independent_ald_nll,
    independent_qr_loss,
    mdn_nll,
    pinball,
    single_nll,
    umal_nll,
)
from .model import Model, ModelSpec, expand_with_tau
from .train import TrainConfig, TrainingDiverged, sample_taus, train_model

__version__ = "0.1.0"

__all__ = [
    "ALDComponent",
    "CalibrationCurve",
    "Dataset",
    "DensityGrid",
    "EvaluationError",
    "FiniteMixture",
    "IngestionError",
    "Model",
    "ModelSpec",
    "PredictConfig",
    "Split",
    "TauBatch",
    "TrainConfig",
    "TrainingDiverged",
    "active_backend",
    "ald_cdf",
    "ald_logpdf",
    "ald_quantile",
    "calibration_curve",
    "compute_metrics",
    "crossing_report",
    "expand_with_tau",
    "export_densities",
    "generate_synthetic",
    "head_loss",
    "independent_ald_nll",
    "independent_qr_loss",
    "load_tabular",
    "mdn_nll",
    "pinball",
    "pit_values",
    "predict_density",
    "quantile_density",
    "sample_taus",
    "set_backend",
    "single_nll",
    "split_dataset",
    "test_loglik",
    "train_model",
    "true_cdf",
    "true_logpdf",
    "umal_nll",
    "__version__",
]
