from .demo import DemoConfig, DemoResult, run_demo, schedules_for
from .gradcheck import finite_difference_errors
from .graph import Graph, GraphStateError, Node, SparseParameter, sgd_step
from .model import MLP, Dataset, teacher_task
from .schedules import (
    Iterative,
    LayerWise,
    LogRow,
    OneShot,
    PruneEvent,
    TrainConfig,
    TrainLog,
    model_sparsity,
    per_layer_target_met,
    prune_layers,
    run_schedule,
    train_dense,
)

__all__ = [
    "DemoConfig", "DemoResult", "finite_difference_errors", "run_demo", "schedules_for",
    "Dataset", "Graph", "GraphStateError", "Iterative", "LayerWise", "LogRow", "MLP", "Node",
    "OneShot", "PruneEvent", "SparseParameter", "TrainConfig", "TrainLog", "model_sparsity",
    "per_layer_target_met", "prune_layers", "run_schedule", "sgd_step", "teacher_task",
    "train_dense",
]
