"""Turning network outputs into refined, scored boxes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geom3d import Box3D
from ..sampler import unnormalize_position

MIN_DIM = 0.05
TOP_K = 3
SCORE_THRESHOLD = 0.03


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class Refined:
    box: Box3D
    label: int
    head_score: float


def apply_residuals(proposal: Box3D, dp, dd, y) -> Refined:
    """Add the unnormalized center residual and the size residual; yaw and alpha are kept."""
    y = np.asarray(y, dtype=np.float64)
    label = int(np.argmax(y))
    center = np.asarray(proposal.center) + unnormalize_position(np.asarray(dp, dtype=np.float64))
    dims = np.maximum(np.asarray(proposal.dims) + np.asarray(dd, dtype=np.float64), MIN_DIM)
    score = float(sigmoid(y[label]))
    box = Box3D(tuple(map(float, center)), tuple(map(float, dims)), proposal.yaw, alpha=proposal.alpha, label=label, score=score)
    return Refined(box, label, score)


def refine_all(proposals: Sequence[Box3D], y, dp, dd) -> list[Refined]:
    return [apply_residuals(p, dp[i], dd[i], y[i]) for i, p in enumerate(proposals)]


def select_predictions(
    refined: Sequence[Refined],
    anchor_index: Sequence[int],
    anchor_scores: Sequence[float],
    k: int = TOP_K,
    threshold: float = SCORE_THRESHOLD,
) -> list[Box3D]:
    """Keep at most ``k`` refined boxes per anchor whose head score exceeds ``threshold``.

    The threshold is applied to the head score; the kept box is scored with
    the product of the anchor score and the head score.  Output is grouped by
    anchor, best first within each group; ties keep proposal order.
    """
    groups: dict[int, list[int]] = {}
    for i, a in enumerate(anchor_index):
        groups.setdefault(int(a), []).append(i)
    out = []
    for a in sorted(groups):
        idx = sorted(groups[a], key=lambda i: -refined[i].head_score)
        kept = [i for i in idx if refined[i].head_score > threshold][:k]
        for i in kept:
            r = refined[i]
            out.append(
                Box3D(r.box.center, r.box.dims, r.box.yaw, alpha=r.box.alpha, label=r.label, score=float(anchor_scores[a]) * r.head_score)
            )
    return out
