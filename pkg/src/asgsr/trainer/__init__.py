"""Progressive training: Adam, stage schedule, snapshots, checkpoints."""

from .adam import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, AdamState, LearningRates
from .checkpoint import CHECKPOINT_MAGIC, CheckpointState, load_checkpoint, save_checkpoint
from .densify import DensifyConfig, densify_prune
from .schedule import ProgressiveSchedule
from .train import (
    GROUND_TRUTH_FILTERS,
    StageSnapshot,
    TrainConfig,
    TrainResult,
    ground_truth_render,
    train,
)

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "AdamState",
    "CHECKPOINT_MAGIC",
    "CheckpointState",
    "DensifyConfig",
    "GROUND_TRUTH_FILTERS",
    "LearningRates",
    "ProgressiveSchedule",
    "StageSnapshot",
    "TrainConfig",
    "TrainResult",
    "densify_prune",
    "ground_truth_render",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
