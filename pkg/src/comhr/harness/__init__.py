"""Training, evaluation, robustness, ablation and scaling tools."""

from .config import TrainConfig
from .metrics import MetricsReport, depth_order_accuracy, evaluate, mpjpe
from .partition import Subgroup, partition_subgroups
from .schedule import cosine_restart_lr
from .train import train, train_step

__all__ = [
    "TrainConfig",
    "MetricsReport",
    "Subgroup",
    "cosine_restart_lr",
    "depth_order_accuracy",
    "evaluate",
    "mpjpe",
    "partition_subgroups",
    "train",
    "train_step",
]
