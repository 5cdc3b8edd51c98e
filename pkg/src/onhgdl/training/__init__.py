"""Splits, augmentation, the training loop, cross-validation and ROC metrics."""
from .augment import AugmentationConfig, augment, augment_indices, eval_indices, eval_input, rotation_z
from .crossval import EvalReport, FoldResult, crossval, filter_tissue, per_tissue_experiment, run_fold
from .loop import TrainConfig, TrainResult, evaluate, predict, train_model
from .metrics import mean_std, roc_auc, roc_curve
from .split import DatasetSplit, check_exclusive, kfold_grouped, split_grouped

__all__ = [
    "AugmentationConfig", "DatasetSplit", "EvalReport", "FoldResult", "TrainConfig", "TrainResult", "augment",
    "augment_indices", "check_exclusive", "crossval", "eval_indices", "eval_input", "evaluate", "filter_tissue",
    "kfold_grouped", "mean_std", "per_tissue_experiment", "predict", "roc_auc", "roc_curve", "rotation_z",
    "run_fold", "split_grouped", "train_model",
]
