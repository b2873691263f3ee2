"""Auto-sizing for Transformer encoder-decoders.

Group-regularized proximal-gradient training drives whole neurons to exact
zero; compaction then deletes them without changing the model's function.
"""
from .autosize import AutosizeScope, compact, detect_dead_groups, prune, scope_to_groups
from .model import ModelConfig, Transformer, count_parameters, label_smoothed_loss
from .prox import GroupSpec, RegKind, Regularizer, apply_prox, prox_l21, prox_linf1, project_l1_ball, reg_value
from .train import TrainConfig, train_loop, train_step

__all__ = [
    "AutosizeScope", "GroupSpec", "ModelConfig", "RegKind", "Regularizer", "TrainConfig", "Transformer",
    "apply_prox", "compact", "count_parameters", "detect_dead_groups", "label_smoothed_loss", "project_l1_ball",
    "prox_l21", "prox_linf1", "prune", "reg_value", "scope_to_groups", "train_loop", "train_step",
]
