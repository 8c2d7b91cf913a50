from .compare import Comparison, compare, write_comparisons
from .finetune import (
    TransferError,
    edge_prediction_experiment,
    edge_splits,
    finetune_graph_task,
    graph_task_model,
    node_classification_experiment,
    predict_graphs,
    run_seeds,
    split_indices,
)
from .metrics import (
    MetricError,
    accuracy,
    auroc,
    direction,
    is_better,
    rmse,
    sweep_heuristic,
    t_two_sided_p,
    welch_statistic,
    welch_test,
)
from .probe import linear_probe, logistic_fit, ridge_fit
from .results import FinetuneConfig, RunResult, TaskSpec, canonical_json, config_hash, summarize

__all__ = [
    "Comparison", "compare", "write_comparisons", "TransferError", "edge_prediction_experiment",
    "edge_splits", "finetune_graph_task", "graph_task_model", "node_classification_experiment",
    "predict_graphs", "run_seeds", "split_indices", "MetricError", "accuracy", "auroc",
    "direction", "is_better", "rmse", "sweep_heuristic", "t_two_sided_p", "welch_statistic",
    "welch_test", "linear_probe", "logistic_fit", "ridge_fit", "FinetuneConfig", "RunResult",
    "TaskSpec", "canonical_json", "config_hash", "summarize",
]
