from .nets import (
    DecisionTransformer,
    ModelConfig,
    MultiAgentDT,
    action_cross_entropy,
    make_model,
    model_loss,
)
from .gat import GATLayer, GATStack, grid_adjacency
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainOptions, TrainResult, train
from .rollout import RolloutResult, rollout, rollout_madt

__all__ = [
    "DecisionTransformer", "ModelConfig", "MultiAgentDT",
    "action_cross_entropy", "make_model", "model_loss",
    "GATLayer", "GATStack", "grid_adjacency",
    "load_checkpoint", "save_checkpoint",
    "TrainOptions", "TrainResult", "train",
    "RolloutResult", "rollout", "rollout_madt",
]
