"""Dataset ingestion, cross-validation, training and evaluation."""

from .data import FoldSplit, UtteranceRecord, load_manifest, split_folds, write_manifest
from .experiment import EvalReport, run_experiment
from .metrics import confusion_matrix, mean_std, weighted_average_precision
from .synthetic import gen_synthetic
from .training import TrainConfig, TrainedModel, load_trained, save_trained, train

__all__ = [
    "EvalReport",
    "FoldSplit",
    "TrainConfig",
    "TrainedModel",
    "UtteranceRecord",
    "confusion_matrix",
    "gen_synthetic",
    "load_manifest",
    "load_trained",
    "mean_std",
    "run_experiment",
    "save_trained",
    "split_folds",
    "train",
    "weighted_average_precision",
    "write_manifest",
]
