"""Federated gradient boosted decision trees over mergeable quantile sketches.

Parties summarize local feature columns as relative-error quantile sketches;
an aggregator merges them into shared split candidates and then grows a
global XGBoost-style model by exchanging bucketed gradient/Hessian histograms
each round. Includes the sample-skew partitioner and the evaluation harness
for the accompanying non-IID study.
"""

from .boosting import Hyperparameters, TreeModel, train_centralized
from .data import DatasetMatrix, PartitionSpec, holdout_split, load_csv, make_partition
from .federation import TrainingConfig, run_training
from .metrics import evaluate_model, f1_score, predict_class
from .sketch import FeatureSketchSet, QuantileSketch

__all__ = [
    "DatasetMatrix",
    "FeatureSketchSet",
    "Hyperparameters",
    "PartitionSpec",
    "QuantileSketch",
    "TrainingConfig",
    "TreeModel",
    "evaluate_model",
    "f1_score",
    "holdout_split",
    "load_csv",
    "make_partition",
    "predict_class",
    "run_training",
    "train_centralized",
]

__version__ = "0.1.0"
