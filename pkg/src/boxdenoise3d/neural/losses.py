"""Training losses: sigmoid focal loss for classification, L1 for size and center."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from ..errors import ConfigError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    gamma: float = 2.0
    lambda_loc: float = 5.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"focal alpha must be in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be non-negative, got {self.gamma}")
        if self.lambda_loc <= 0:
            raise ConfigError(f"lambda_loc must be positive, got {self.lambda_loc}")

    def to_dict(self) -> dict:
        return asdict(self)


def focal_terms(logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.5, gamma: float = 2.0) -> torch.Tensor:
    """Element-wise ``-a_t (1 - p_t)^gamma log p_t`` on sigmoid probabilities."""
    p = torch.sigmoid(logits)
    # log p_t computed stably from logits
    log_pt = -torch.nn.functional.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    a_t = alpha * targets + (1 - alpha) * (1 - targets)
    return -a_t * (1 - p_t) ** gamma * log_pt


def focal_loss(logits, targets, alpha: float = 0.5, gamma: float = 2.0, num_pos=None) -> torch.Tensor:
    """Summed focal terms over ``max(num_pos, 1)``; ``num_pos`` defaults to the positive count in ``targets``."""
    if num_pos is None:
        num_pos = float(targets.sum())
    return focal_terms(logits, targets, alpha, gamma).sum() / max(float(num_pos), 1.0)


def total_loss(outputs, targets, cfg: LossConfig = LossConfig()) -> tuple[torch.Tensor, dict]:
    """Classification + size + lambda * location.

    ``outputs`` is ``(y (N, L), dP (N, 3), dD (N, 3))``.  ``targets`` holds
    ``pos`` (indices of matched proposals), ``labels`` (their classes),
    ``dp`` and ``dd`` (their residual targets, normalized center and meters).
    Regression terms only use matched proposals and are averaged over them.
    """
    y, dp, dd = outputs
    pos = targets["pos"]
    n_pos = len(pos)
    cls_t = torch.zeros_like(y)
    if n_pos:
        cls_t[pos, targets["labels"]] = 1.0
    l_cls = focal_loss(y, cls_t, cfg.alpha, cfg.gamma, n_pos)
    denom = max(n_pos, 1)
    if n_pos:
        l_size = (dd[pos] - targets["dd"]).abs().sum() / denom
        l_loc = (dp[pos] - targets["dp"]).abs().sum() / denom
    else:
        l_size = l_loc = y.sum() * 0.0
    total = l_cls + l_size + cfg.lambda_loc * l_loc
    return total, {"cls": l_cls.item(), "size": l_size.item(), "loc": l_loc.item()}
