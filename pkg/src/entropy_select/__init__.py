"""Entropy-based selection of informative training samples.

Train a baseline classifier, rank training samples by prediction entropy,
search the kept proportion with Gaussian-process Bayesian optimization,
retrain on the selected subset and compare the two models statistically.
"""

from .bayesopt import BOConfig, OptimizationTrace, SearchSpace, expected_improvement, gp_fit, gp_posterior, minimize
from .classifier import Network, TrainConfig, TrainedModel, fit_two_stage, gap_pool, train_two_stage
from .dataset import Dataset, SplitAssignment, SyntheticConfig, generate_synthetic, load_csv, save_csv, split_by_group
from .entropy import EntropyScoreTable, prediction_entropy, score_training_set, select_informative, selected_count
from .pipeline import RunConfig, export_sankey, run_pipeline
from .stats import ConfusionMatrix, clopper_pearson, compare_recall, metric_report, select_threshold_max_f

__all__ = [
    "BOConfig", "ConfusionMatrix", "Dataset", "EntropyScoreTable", "Network", "OptimizationTrace",
    "RunConfig", "SearchSpace", "SplitAssignment", "SyntheticConfig", "TrainConfig", "TrainedModel",
    "clopper_pearson", "compare_recall", "expected_improvement", "export_sankey", "fit_two_stage",
    "gap_pool", "generate_synthetic", "gp_fit", "gp_posterior", "load_csv", "metric_report", "minimize",
    "prediction_entropy", "run_pipeline", "save_csv", "score_training_set", "select_informative",
    "select_threshold_max_f", "selected_count", "split_by_group", "train_two_stage",
]
