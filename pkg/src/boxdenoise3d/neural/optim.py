"""AdamW with decay excluded from normalization and bias parameters, and a step schedule."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2.25e-5
    betas: tuple[float, float] = (0.95, 0.99)
    weight_decay: float = 1e-4
    milestones: tuple[int, ...] = (16, 22)
    gamma: float = 0.1
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return asdict(self)


def param_groups(model: torch.nn.Module, weight_decay: float) -> list[dict]:
    """Split parameters: 1-D tensors (biases, LayerNorm affine) get no decay."""
    decay, no_decay = [], []
    for _, p in sorted(model.named_parameters()):
        if not p.requires_grad:
            continue
        (no_decay if p.ndim <= 1 else decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def make_optimizer(model: torch.nn.Module, cfg: OptimConfig = OptimConfig()) -> torch.optim.AdamW:
    return torch.optim.AdamW(param_groups(model, cfg.weight_decay), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)


def lr_at_epoch(cfg: OptimConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``: multiplied by ``gamma`` once each milestone is reached."""
    return cfg.lr * cfg.gamma ** sum(epoch >= m for m in cfg.milestones)


def set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for g in opt.param_groups:
        g["lr"] = lr
