"""Proposal verification network, its losses, optimizer and train/infer loops."""
from .losses import LossConfig, focal_loss, total_loss
from .model import ModelConfig, Verifier, canonical_order, mlp_block, predict_scene
from .optim import OptimConfig, lr_at_epoch, make_optimizer
from .refine import apply_residuals, select_predictions

__all__ = [
    "LossConfig",
    "ModelConfig",
    "OptimConfig",
    "Verifier",
    "apply_residuals",
    "canonical_order",
    "focal_loss",
    "lr_at_epoch",
    "make_optimizer",
    "mlp_block",
    "predict_scene",
    "select_predictions",
    "total_loss",
]
