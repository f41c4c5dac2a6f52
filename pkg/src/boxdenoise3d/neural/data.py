"""Per-scene proposal sets with cached features and matching targets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..evalkit import GroundTruth
from ..featurize import FeatureMap, build_features_batch
from ..geom3d import Box3D, CameraModel, corners_array, project_boxes2d, project_points
from ..kitti_io import CLASSES
from ..matchcost import MatchConfig, Target, geometric_cost
from ..sampler import GridSpec, grid_offsets


@dataclass
class ProposalSet:
    frame: str
    cam: CameraModel
    geo: np.ndarray  # (N, 29) float64
    pt: np.ndarray  # (N, 9, C), stored compact
    roi: np.ndarray  # (N, 196, C)
    centers: np.ndarray  # (N, 3)
    dims: np.ndarray  # (N, 3)
    yaws: np.ndarray  # (N,)
    alphas: np.ndarray  # (N,)
    anchor_index: np.ndarray  # (N,) index into anchors
    anchors: list[Box3D]
    gts: list[GroundTruth]
    gt_labels: np.ndarray  # (M,)
    gt_centers: np.ndarray  # (M, 3)
    gt_dims: np.ndarray  # (M, 3)
    geo_cost: np.ndarray  # (M, N)

    def __len__(self) -> int:
        return len(self.geo)

    @property
    def anchor_scores(self) -> np.ndarray:
        return np.array([a.score for a in self.anchors], dtype=np.float64)

    def proposal_boxes(self) -> list[Box3D]:
        return [
            Box3D(tuple(self.centers[i]), tuple(self.dims[i]), float(self.yaws[i]), alpha=float(self.alphas[i]),
                  label=self.anchors[self.anchor_index[i]].label, score=self.anchors[self.anchor_index[i]].score)
            for i in range(len(self))
        ]


def _grid_arrays(anchors: Sequence[Box3D], spec: GridSpec):
    offs = np.asarray(grid_offsets(spec), dtype=np.float64)  # (K, 2) as (dx, dz)
    k = len(offs)
    c = np.array([a.center for a in anchors], dtype=np.float64).reshape(-1, 3)
    centers = np.repeat(c, k, axis=0)
    centers[:, 0] += np.tile(offs[:, 0], len(anchors))
    centers[:, 2] += np.tile(offs[:, 1], len(anchors))
    dims = np.repeat(np.array([a.dims for a in anchors], dtype=np.float64).reshape(-1, 3), k, axis=0)
    yaws = np.repeat(np.array([a.yaw for a in anchors], dtype=np.float64), k)
    alphas = np.repeat(np.array([a.alpha for a in anchors], dtype=np.float64), k)
    anchor_index = np.repeat(np.arange(len(anchors)), k)
    return centers, dims, yaws, alphas, anchor_index


def _visible(cam: CameraModel, centers, dims, yaws) -> np.ndarray:
    """Proposals with at least one corner in front of the camera."""
    if len(centers) == 0:
        return np.zeros(0, dtype=bool)
    corners = corners_array(centers, dims, yaws)
    _, behind = project_points(cam, corners)
    return ~behind.all(axis=1)


def build_proposal_set(
    gts: Sequence[GroundTruth],
    anchors: Sequence[Box3D],
    cam: CameraModel,
    fm: FeatureMap,
    spec: GridSpec = GridSpec(),
    match_cfg: Optional[MatchConfig] = None,
    frame: str = "",
    store_dtype=np.float16,
) -> ProposalSet:
    """Sample grid proposals around ``anchors`` and cache their features and matching costs.

    Proposals entirely behind the camera are dropped.  Ground truths that are
    not one of the known classes (e.g. DontCare) are not matching targets.
    """
    match_cfg = match_cfg or MatchConfig(image_size=cam.image_size)
    anchors = list(anchors)
    centers, dims, yaws, alphas, aidx = _grid_arrays(anchors, spec)
    keep = _visible(cam, centers, dims, yaws)
    centers, dims, yaws, alphas, aidx = centers[keep], dims[keep], yaws[keep], alphas[keep], aidx[keep]
    c = fm.channels
    if len(centers):
        geo, pt, roi = build_features_batch(centers, dims, yaws, alphas, cam, fm)
    else:
        geo, pt, roi = np.zeros((0, 29)), np.zeros((0, 9, c)), np.zeros((0, 196, c))
    real = [g for g in gts if g.box is not None and g.category in CLASSES]
    targets = [Target(CLASSES.index(g.category), tuple(g.bbox2d.as_array()), g.box) for g in real]
    if len(centers) and targets:
        box2d, _ = project_boxes2d(cam, corners_array(centers, dims, yaws))
        props = [Box3D(tuple(centers[i]), tuple(dims[i]), float(yaws[i])) for i in range(len(centers))]
        cost = geometric_cost(targets, box2d, props, match_cfg)
    else:
        cost = np.zeros((len(targets), len(centers)))
    return ProposalSet(
        frame=frame,
        cam=cam,
        geo=geo,
        pt=pt.astype(store_dtype),
        roi=roi.astype(store_dtype),
        centers=centers,
        dims=dims,
        yaws=yaws,
        alphas=alphas,
        anchor_index=aidx,
        anchors=anchors,
        gts=list(gts),
        gt_labels=np.array([t.label for t in targets], dtype=np.int64),
        gt_centers=np.array([t.box3d.center for t in targets], dtype=np.float64).reshape(-1, 3),
        gt_dims=np.array([t.box3d.dims for t in targets], dtype=np.float64).reshape(-1, 3),
        geo_cost=cost,
    )


def from_synthetic(scene, spec: GridSpec = GridSpec(), match_cfg: Optional[MatchConfig] = None, **kw) -> ProposalSet:
    return build_proposal_set(scene.gts, scene.anchors, scene.cam, scene.fm, spec, match_cfg, frame=scene.frame, **kw)
