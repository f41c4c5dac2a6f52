"""KITTI-style 40-recall-point interpolated AP in 3D and BEV."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation
from .geom3d import Box2D, Box3D, CameraModel, iou_2d, iou_3d, iou_bev, project_box2d
from .kitti_io import CLASSES, DONT_CARE, DIFFICULTY_THRESHOLDS, Difficulty, LabelRecord, record_to_box

log = logging.getLogger(__name__)

N_RECALL = 40
DONT_CARE_IOU = 0.5
# classes whose boxes are neither counted nor penalized for a given category
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


class Metric(str, enum.Enum):
    IOU3D = "3d"
    IOUBEV = "bev"


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    metric: Metric = Metric.IOU3D
    difficulty: Difficulty = Difficulty.MODERATE
    category: str = "Car"
    thresholds: Optional[dict] = None

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ContractViolation(f"IoU threshold must lie in (0, 1], got {self.iou_threshold}")
        if isinstance(self.category, int):
            object.__setattr__(self, "category", CLASSES[self.category])
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "difficulty", Difficulty(self.difficulty))


@dataclass(frozen=True)
class GroundTruth:
    box: Optional[Box3D]
    bbox2d: Box2D
    category: str
    truncation: float = 0.0
    occlusion: int = 0

    @property
    def is_dont_care(self) -> bool:
        return self.category == DONT_CARE

    @classmethod
    def from_record(cls, rec: LabelRecord) -> "GroundTruth":
        box = None if rec.is_dont_care else record_to_box(rec)
        return cls(box, rec.bbox2d, rec.type, rec.truncation, rec.occlusion)

    def meets(self, level: Difficulty, thresholds=None) -> bool:
        min_h, max_occ, max_trunc = (thresholds or DIFFICULTY_THRESHOLDS)[level]
        return self.bbox2d.height >= min_h and self.occlusion <= max_occ and self.truncation <= max_trunc


@dataclass(frozen=True)
class Detection:
    box: Box3D
    bbox2d: Box2D
    category: str

    @property
    def score(self) -> float:
        return self.box.score

    @classmethod
    def from_record(cls, rec: LabelRecord) -> "Detection":
        return cls(record_to_box(rec), rec.bbox2d, rec.type)

    @classmethod
    def from_box(cls, box: Box3D, cam: CameraModel) -> "Detection":
        return cls(box, project_box2d(cam, box), CLASSES[box.label])


@dataclass
class MatchResult:
    """Per-detection flags in the caller's order plus per-GT matched flags."""

    tp: np.ndarray
    fp: np.ndarray
    ignored: np.ndarray
    gt_matched: np.ndarray
    gt_valid: np.ndarray
    scores: np.ndarray


@dataclass
class PRCurve:
    recall: np.ndarray = field(default_factory=lambda: np.linspace(0, 1, N_RECALL + 1))
    precision: np.ndarray = field(default_factory=lambda: np.zeros(N_RECALL + 1))
    ap: float = 0.0
    num_gt: int = 0
    warning: Optional[str] = None


def _iou(metric: Metric, a: Box3D, b: Box3D) -> float:
    return iou_3d(a, b) if metric == Metric.IOU3D else iou_bev(a, b)


def _gt_status(gts: Sequence[GroundTruth], cfg: EvalConfig) -> tuple[np.ndarray, np.ndarray]:
    valid = np.zeros(len(gts), bool)
    ignored = np.zeros(len(gts), bool)
    neighbors = NEIGHBOR_CLASSES.get(cfg.category, ())
    for i, g in enumerate(gts):
        if g.category == cfg.category:
            if g.meets(cfg.difficulty, cfg.thresholds):
                valid[i] = True
            else:
                ignored[i] = True
        elif g.category in neighbors:
            ignored[i] = True
    return valid, ignored


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig) -> MatchResult:
    """Greedy score-ordered matching of one image's detections to its GTs.

    Detections of other categories are flagged ignored.  A detection is a TP
    if it reaches the IoU threshold with some still-unmatched eligible GT (the
    highest-IoU one is taken).  Otherwise it is ignored when it reaches the
    threshold with an ignored GT or overlaps a DontCare region by more than
    0.5 in 2D; everything else is a FP.
    """
    n = len(dets)
    tp = np.zeros(n, bool)
    fp = np.zeros(n, bool)
    ign = np.zeros(n, bool)
    valid, ignored_gt = _gt_status(gts, cfg)
    matched = np.zeros(len(gts), bool)
    dont_care = [g.bbox2d for g in gts if g.is_dont_care]
    order = sorted(range(n), key=lambda i: -dets[i].score)
    for i in order:
        d = dets[i]
        if d.category != cfg.category:
            ign[i] = True
            continue
        best, best_iou = -1, -1.0
        hits_ignored = False
        for j, g in enumerate(gts):
            if not (valid[j] or ignored_gt[j]):
                continue
            o = _iou(cfg.metric, d.box, g.box)
            if o < cfg.iou_threshold:
                continue
            if ignored_gt[j]:
                hits_ignored = True
            elif not matched[j] and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            tp[i] = True
            matched[best] = True
        elif hits_ignored or any(iou_2d(d.bbox2d, dc) > DONT_CARE_IOU for dc in dont_care):
            ign[i] = True
        else:
            fp[i] = True
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return MatchResult(tp, fp, ign, matched, valid, scores)


def pr_from_flags(scores: np.ndarray, tp: np.ndarray, num_gt: int) -> PRCurve:
    """Interpolated precision at recall i/40 from scored TP/FP flags (ignored already removed)."""
    curve = PRCurve(num_gt=num_gt)
    if num_gt == 0:
        curve.warning = "no eligible ground truth; AP reported as 0"
        return curve
    if len(scores) == 0:
        return curve
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = tp[order].astype(np.float64)
    ctp = np.cumsum(t)
    cfp = np.cumsum(1.0 - t)
    # one PR point per distinct score: tied detections enter together
    last_of_group = np.r_[s[1:] != s[:-1], True]
    rec = ctp[last_of_group] / num_gt
    prec = ctp[last_of_group] / (ctp[last_of_group] + cfp[last_of_group])
    # running max from the right gives max precision at recall >= r
    interp = np.maximum.accumulate(prec[::-1])[::-1]
    for k, r in enumerate(curve.recall):
        idx = np.searchsorted(rec, r - 1e-12, side="left")
        curve.precision[k] = interp[idx] if idx < len(interp) else 0.0
    curve.ap = float(curve.precision[1:].sum() / N_RECALL * 100.0)
    return curve


def evaluate(images: Sequence[tuple[Sequence[Detection], Sequence[GroundTruth]]], cfg: EvalConfig) -> PRCurve:
    all_scores, all_tp = [], []
    num_gt = 0
    for dets, gts in images:
        m = match_detections(dets, gts, cfg)
        keep = m.tp | m.fp
        all_scores.append(m.scores[keep])
        all_tp.append(m.tp[keep])
        num_gt += int(m.gt_valid.sum())
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    tp = np.concatenate(all_tp) if all_tp else np.zeros(0, bool)
    curve = pr_from_flags(scores, tp, num_gt)
    if curve.warning:
        log.warning("%s (%s, %s)", curve.warning, cfg.category, cfg.difficulty.name)
    return curve


def ap_r40(images, cfg: EvalConfig) -> float:
    return evaluate(images, cfg).ap


def evaluate_table(images, category="Car", iou_threshold=0.7, thresholds=None) -> dict:
    """AP_3D and AP_BEV for every difficulty, keyed ``{"3d": {"easy": ..}, "bev": {..}}``."""
    out = {}
    for metric in (Metric.IOU3D, Metric.IOUBEV):
        row = {}
        for diff in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
            cfg = EvalConfig(iou_threshold, metric, diff, category, thresholds)
            curve = evaluate(images, cfg)
            row[diff.name.lower()] = round(curve.ap, 6)
            if curve.warning:
                row.setdefault("warnings", []).append(f"{diff.name.lower()}: {curve.warning}")
        out[metric.value] = row
    return out
