"""Dataset handling, training, evaluation and persistence."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (NormStats, PointCloudSample, design_params, generate_dataset, make_sample,
                   normalize_fit, read_dataset, split_dataset, write_dataset)
from .metrics import MetricsReport, r_squared, rel_l2
from .training import OraclePredictor, Surrogate, TrainingLog, evaluate, train

__all__ = [
    "NormStats", "PointCloudSample", "design_params", "generate_dataset", "make_sample",
    "normalize_fit", "read_dataset", "split_dataset", "write_dataset", "MetricsReport",
    "r_squared", "rel_l2", "OraclePredictor", "Surrogate", "TrainingLog", "evaluate", "train",
    "load_checkpoint", "save_checkpoint",
]
