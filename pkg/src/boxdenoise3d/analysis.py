"""Empirical upper bound of grid search around anchors, and proposal-overlap statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AllBehindCamera, InsufficientNeighbors
from .evalkit import Detection, EvalConfig, GroundTruth, Metric, evaluate
from .geom3d import Box3D, CameraModel, corners_array, iou_2d_matrix, iou_3d, project_boxes2d
from .kitti_io import Difficulty
from .sampler import GridSpec, center_index, sample_proposals

REPORT_NOTE = (
    "oracle set: for every anchor, the single grid proposal with the highest 3D IoU to any "
    "ground truth, keeping the anchor's score; anchors that overlap no ground truth are kept as-is"
)


@dataclass
class OracleSelection:
    boxes: list[Box3D]
    best_iou_per_gt: list[float]
    anchor_iou: list[float]


def oracle_select(gts: Sequence[Box3D], anchors: Sequence[Box3D], spec: GridSpec, cam: Optional[CameraModel] = None) -> OracleSelection:
    """Pick, for each anchor, its grid proposal that best overlaps any ground truth.

    Ties go to the lowest grid index (row-major from the most negative
    offsets).  An anchor whose proposals all have zero IoU is returned
    unchanged.  ``cam`` is accepted for interface symmetry and unused.
    """
    best_gt = [0.0] * len(gts)
    selected, anchor_iou = [], []
    mid = center_index(spec)
    for anchor in anchors:
        props = sample_proposals(anchor, spec)
        best_i, best_v = mid, 0.0
        raw = 0.0
        for i, p in enumerate(props):
            for j, g in enumerate(gts):
                v = iou_3d(p, g)
                if v > best_gt[j]:
                    best_gt[j] = v
                if v > best_v:
                    best_i, best_v = i, v
                if i == mid and v > raw:
                    raw = v
        selected.append(props[best_i])
        anchor_iou.append(raw)
    return OracleSelection(selected, best_gt, anchor_iou)


def iou_avg_topk(groups: Sequence[Sequence[Box3D]], cam: CameraModel, k: int = 5) -> float:
    """Mean over proposals of the average 2D IoU with their k most-overlapping siblings.

    ``groups`` holds the proposals of each anchor; siblings are only looked
    up within a group.
    """
    per_prop = []
    for group in groups:
        if len(group) <= k:
            raise InsufficientNeighbors(f"need more than {k} proposals per anchor, got {len(group)}")
        corners = corners_array([b.center for b in group], [b.dims for b in group], [b.yaw for b in group])
        boxes, _ = project_boxes2d(cam, corners)
        if np.isnan(boxes).any():
            raise AllBehindCamera("a proposal projects entirely behind the camera")
        m = iou_2d_matrix(boxes, boxes)
        np.fill_diagonal(m, -np.inf)
        top = -np.sort(-m, axis=1)[:, :k]
        per_prop.append(top.mean(axis=1))
    if not per_prop:
        return float("nan")
    return float(np.concatenate(per_prop).mean())


@dataclass
class Scene:
    """One image's ground truth, anchors and camera."""

    gts: list[GroundTruth]
    anchors: list[Detection]
    cam: CameraModel
    frame: str = ""


@dataclass
class UpperBoundReport:
    spec: dict
    category: str
    iou_threshold: float
    anchor_ap: dict
    oracle_ap: dict
    best_iou_per_gt: list[float]
    proposal_count: int
    proposals_per_anchor: int
    mean_iou_avg_k: Optional[float]
    k: int
    note: str = REPORT_NOTE
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _ap_by_difficulty(images, category, thr, metric) -> tuple[dict, list]:
    out, warns = {}, []
    for diff in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        curve = evaluate(images, EvalConfig(thr, metric, diff, category))
        out[diff.name.lower()] = curve.ap
        if curve.warning:
            warns.append(f"{metric.value}/{diff.name.lower()}: {curve.warning}")
    return out, warns


def upper_bound(
    scenes: Sequence[Scene],
    spec: GridSpec,
    k: int = 5,
    category: str = "Car",
    iou_threshold: float = 0.7,
    with_stats: bool = True,
) -> UpperBoundReport:
    raw_images, oracle_images = [], []
    best_iou: list[float] = []
    groups_total = 0
    groups_for_stats = []
    for sc in scenes:
        gt_boxes = [g.box for g in sc.gts if g.box is not None and g.category == category]
        anchors = [d for d in sc.anchors if d.category == category]
        sel = oracle_select(gt_boxes, [a.box for a in anchors], spec, sc.cam)
        best_iou.extend(sel.best_iou_per_gt)
        raw_images.append((list(sc.anchors), sc.gts))
        chosen = [Detection.from_box(b, sc.cam) for b in sel.boxes]
        others = [d for d in sc.anchors if d.category != category]
        oracle_images.append((chosen + others, sc.gts))
        groups_total += len(anchors)
        if with_stats:
            groups_for_stats.extend(sample_proposals(a.box, spec) for a in anchors)
    anchor_ap, w1 = _ap_by_difficulty(raw_images, category, iou_threshold, Metric.IOU3D)
    oracle_ap, w2 = _ap_by_difficulty(oracle_images, category, iou_threshold, Metric.IOU3D)
    stat = None
    if with_stats and groups_for_stats and spec.count > k:
        stat = iou_avg_topk(groups_for_stats, scenes[0].cam, k) if _same_camera(scenes) else _stat_per_scene(scenes, spec, k, category)
    return UpperBoundReport(
        spec={"range_m": spec.range_m, "stride_m": spec.stride_m},
        category=category,
        iou_threshold=iou_threshold,
        anchor_ap=anchor_ap,
        oracle_ap=oracle_ap,
        best_iou_per_gt=best_iou,
        proposal_count=groups_total * spec.count,
        proposals_per_anchor=spec.count,
        mean_iou_avg_k=stat,
        k=k,
        warnings=sorted(set(w1 + w2)),
    )


def _same_camera(scenes: Sequence[Scene]) -> bool:
    P0 = scenes[0].cam.P
    return all(np.array_equal(s.cam.P, P0) and s.cam.image_size == scenes[0].cam.image_size for s in scenes)


def _stat_per_scene(scenes, spec, k, category) -> float:
    vals, counts = [], []
    for sc in scenes:
        groups = [sample_proposals(a.box, spec) for a in sc.anchors if a.category == category]
        if groups:
            vals.append(iou_avg_topk(groups, sc.cam, k))
            counts.append(sum(len(g) for g in groups))
    return float(np.average(vals, weights=counts)) if vals else float("nan")


