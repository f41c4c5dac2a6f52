"""Ground-truth assignment for set prediction.

The pair cost between a ground truth and a prediction is

    -l1 * p(class) + l2 * L1(normalized 2D corners) + l3 * (1 - IoU2D) + l4 * (1 - IoU3D)

and zero for a dummy (padding) ground truth.  Optimal one-to-one matching is
delegated to scipy's ``linear_sum_assignment``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, ContractViolation, TooManyGroundTruths
from .geom3d import Box3D, iou_2d_matrix, iou_3d


@dataclass(frozen=True)
class MatchConfig:
    lambda1: float = 2.0  # class probability
    lambda2: float = 5.0  # L1 on normalized 2D box
    lambda3: float = 2.0  # 2D IoU
    lambda4: float = 2.0  # 3D IoU
    image_size: tuple[int, int] = (1242, 375)

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3, self.lambda4)
        if any(l < 0 for l in lams):
            raise ConfigError(f"matching weights must be non-negative, got {lams}")
        if not any(l > 0 for l in lams):
            raise ConfigError("at least one matching weight must be positive")

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


# assigner variants used in the ablation
PRESETS = {
    "cls+2d": MatchConfig(2.0, 5.0, 2.0, 0.0),
    "cls+3d": MatchConfig(2.0, 0.0, 0.0, 2.0),
    "full": MatchConfig(),
}


@dataclass(frozen=True)
class Target:
    """A real ground truth: class index, pixel xyxy 2D box and 3D box."""

    label: int
    box2d: tuple
    box3d: Box3D


@dataclass(frozen=True)
class Prediction:
    probs: Optional[np.ndarray]
    box2d: tuple
    box3d: Box3D


@dataclass
class Assignment:
    perm: np.ndarray  # perm[i] = prediction slot matched to GT slot i
    costs: np.ndarray  # cost of each matched pair, by GT slot
    num_real: int

    @property
    def total(self) -> float:
        return float(self.costs.sum())

    def matched(self) -> list[tuple[int, int]]:
        """(gt index, prediction index) for the real ground truths."""
        return [(i, int(self.perm[i])) for i in range(self.num_real)]


def _norm_boxes(boxes, image_size) -> np.ndarray:
    w, h = image_size
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / np.array([w, h, w, h])


def pair_cost(gt: Optional[Target], pred: Prediction, cfg: MatchConfig = MatchConfig()) -> float:
    if pred.probs is None:
        raise ContractViolation("prediction has no class probability vector")
    if gt is None:
        return 0.0
    l1, l2, l3, l4 = cfg.lambdas
    a = _norm_boxes(gt.box2d, cfg.image_size)
    b = _norm_boxes(pred.box2d, cfg.image_size)
    bbox = float(np.abs(a - b).sum())
    iou2 = float(iou_2d_matrix(np.asarray(gt.box2d, float)[None], np.asarray(pred.box2d, float)[None])[0, 0])
    iou3 = iou_3d(gt.box3d, pred.box3d)
    return -l1 * float(pred.probs[gt.label]) + l2 * bbox + l3 * (1.0 - iou2) + l4 * (1.0 - iou3)


def geometric_cost(gts: Sequence[Target], pred_box2d, pred_box3d: Sequence[Box3D], cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """The probability-free part of the cost, ``(M, N)``.

    It depends only on boxes, so training can compute it once per proposal set.
    """
    m, n = len(gts), len(pred_box3d)
    out = np.zeros((m, n))
    if m == 0 or n == 0:
        return out
    _, l2, l3, l4 = cfg.lambdas
    gb = np.array([g.box2d for g in gts], dtype=np.float64)
    pb = np.asarray(pred_box2d, dtype=np.float64).reshape(n, 4)
    if l2:
        out += l2 * np.abs(_norm_boxes(gb, cfg.image_size)[:, None] - _norm_boxes(pb, cfg.image_size)[None]).sum(-1)
    if l3:
        out += l3 * (1.0 - iou_2d_matrix(gb, pb))
    if l4:
        out += l4 * (1.0 - np.array([[iou_3d(g.box3d, p) for p in pred_box3d] for g in gts]))
    return out


def cost_matrix(gts: Sequence[Target], preds: Sequence[Prediction], cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """Square ``(N, N)`` cost with GT rows padded by zero-cost dummies."""
    n = len(preds)
    if len(gts) > n:
        raise TooManyGroundTruths(f"{len(gts)} ground truths but only {n} predictions")
    if any(p.probs is None for p in preds):
        raise ContractViolation("prediction has no class probability vector")
    c = np.zeros((n, n))
    if gts:
        probs = np.array([p.probs for p in preds], dtype=np.float64)
        labels = np.array([g.label for g in gts])
        geo = geometric_cost(gts, [p.box2d for p in preds], [p.box3d for p in preds], cfg)
        c[: len(gts)] = geo - cfg.lambda1 * probs[:, labels].T
    return c


def hungarian(cost) -> Assignment:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ContractViolation(f"cost matrix must be square, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ContractViolation("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(c)
    perm = np.empty(len(c), dtype=np.int64)
    perm[rows] = cols
    return Assignment(perm, c[np.arange(len(c)), perm], len(c))


def assign(gts: Sequence[Target], preds: Sequence[Prediction], cfg: MatchConfig = MatchConfig()) -> Assignment:
    res = hungarian(cost_matrix(gts, preds, cfg))
    res.num_real = len(gts)
    return res


def assign_from_matrix(geo: np.ndarray, probs: np.ndarray, labels, lambda1: float) -> np.ndarray:
    """Fast path for training: ``geo`` is ``(M, N)``, ``probs`` ``(N, K)``.

    Returns, for each of the M ground truths, the matched prediction index.
    Padding rows are zero so only the real block matters; an ``M x N``
    rectangular problem has the same optimum.
    """
    m, n = geo.shape
    if m > n:
        raise TooManyGroundTruths(f"{m} ground truths but only {n} predictions")
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    c = geo - lambda1 * np.asarray(probs)[:, np.asarray(labels)].T
    rows, cols = linear_sum_assignment(c)
    out = np.empty(m, dtype=np.int64)
    out[rows] = cols
    return out
