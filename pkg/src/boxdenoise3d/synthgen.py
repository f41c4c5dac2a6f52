"""Seeded synthetic scenes: ground truth, noisy bottom-up anchors and a feature map.

Randomness uses numpy's PCG64 bit generator seeded from
``SeedSequence(cfg.seed, spawn_key=(scene_index,))``, so every scene owns an
independent, reproducible stream.

The feature map is an oracle standing in for an image backbone.  Every cell
is tied to the ground-truth object whose projected center is nearest in
pixels, and its channels hold sinusoids of the signed pixel offset from the
cell to that center, the object's depth and its dimensions, plus Gaussian
noise.  Geometry together with these features determines the true residual
of every proposal.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tnsr
from .errors import ConfigError
from .evalkit import Detection, GroundTruth
from .featurize import FeatureMap
from .geom3d import Box3D, CameraModel, corners_array, iou_bev, project_box2d, project_points
from .kitti_io import CLASSES, box_to_record, write_calib, write_labels, write_predictions

KITTI_P2 = (
    (721.5377, 0.0, 609.5593, 44.85728),
    (0.0, 721.5377, 172.854, 0.2163791),
    (0.0, 0.0, 1.0, 0.002745884),
)

# per class (mean h, w, l), (std h, w, l) in meters
DIM_PRIORS = {
    "Car": ((1.53, 1.63, 3.88), (0.14, 0.10, 0.43)),
    "Pedestrian": ((1.76, 0.66, 0.84), (0.11, 0.14, 0.23)),
    "Cyclist": ((1.74, 0.60, 1.76), (0.09, 0.12, 0.18)),
}

# feature-oracle scales: offsets in px, depth around 25 m, dims around the prior mean
_OFFSET_SCALE = 120.0
_DEPTH_CENTER, _DEPTH_SCALE = 25.0, 15.0
_DIM_SCALE = 0.5


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_objects: tuple[int, int] = (1, 4)
    depth_range: tuple[float, float] = (8.0, 40.0)
    anchor_sigma: tuple[float, float, float] = (0.5, 0.1, 0.5)
    dim_sigma: float = 0.05
    score_range: tuple[float, float] = (0.3, 1.0)
    class_weights: dict = field(default_factory=lambda: {"Car": 1.0})
    camera_height: float = 1.65
    P: tuple = KITTI_P2
    image_size: tuple[int, int] = (1242, 375)
    channels: int = 16
    stride: float = 4.0
    feature_noise: float = 0.02
    appearance: bool = True
    max_bev_iou: float = 0.1
    max_retries: int = 100

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ConfigError(f"depth range must be positive and increasing, got {self.depth_range}")
        if any(s < 0 for s in self.anchor_sigma) or self.dim_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ConfigError(f"bad n_objects range {self.n_objects}")
        unknown = set(self.class_weights) - set(DIM_PRIORS)
        if unknown:
            raise ConfigError(f"unknown classes {sorted(unknown)}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")

    @property
    def camera(self) -> CameraModel:
        return CameraModel(np.array(self.P), tuple(self.image_size))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene config keys {sorted(unknown)}")
        kw = dict(d)
        for key in ("n_objects", "depth_range", "anchor_sigma", "score_range", "image_size"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "P" in kw:
            kw["P"] = tuple(tuple(r) for r in kw["P"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass
class SyntheticScene:
    gts: list[GroundTruth]
    anchors: list[Box3D]
    cam: CameraModel
    fm: FeatureMap
    frame: str = ""

    @property
    def gt_boxes(self) -> list[Box3D]:
        return [g.box for g in self.gts]

    def anchor_detections(self) -> list[Detection]:
        return [Detection.from_box(a, self.cam) for a in self.anchors]


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _sample_gt(rng, cfg: SceneConfig, cam: CameraModel) -> Optional[GroundTruth]:
    names = sorted(cfg.class_weights)
    w = np.array([cfg.class_weights[n] for n in names], dtype=float)
    name = names[int(rng.choice(len(names), p=w / w.sum()))]
    mean, std = DIM_PRIORS[name]
    dims = np.maximum(rng.normal(mean, std), 0.3)
    z = rng.uniform(*cfg.depth_range)
    fx, cx = cam.P[0, 0], cam.P[0, 2]
    u = rng.uniform(0.05, 0.95) * cam.width
    x = (u - cx) * z / fx
    y = cfg.camera_height + rng.normal(0, 0.05) - dims[0] / 2
    yaw = rng.uniform(-math.pi, math.pi)
    box = Box3D((x, y, z), tuple(dims), yaw, label=CLASSES.index(name), score=1.0)
    corners = corners_array(box.center, box.dims, box.yaw)
    uv, behind = project_points(cam, corners[0])
    if behind.any():
        return None
    raw = [uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max()]
    b2d = project_box2d(cam, box)
    raw_area = (raw[2] - raw[0]) * (raw[3] - raw[1])
    trunc = 1.0 - b2d.area / raw_area if raw_area > 0 else 1.0
    if trunc > 0.5:
        return None
    return GroundTruth(box, b2d, name, round(float(trunc), 2), 0)


def _noisy_anchor(rng, gt: Box3D, cfg: SceneConfig) -> Box3D:
    sx, sy, sz = cfg.anchor_sigma
    c = np.asarray(gt.center) + rng.normal(0.0, 1.0, 3) * [sx, sy, sz]
    dims = np.maximum(np.asarray(gt.dims) + rng.normal(0.0, 1.0, 3) * cfg.dim_sigma, 0.1)
    score = float(rng.uniform(*cfg.score_range))
    return Box3D(tuple(c), tuple(dims), gt.yaw, label=gt.label, score=score)


def _oracle_quantities(u, v, gts: list[GroundTruth], cam: CameraModel) -> np.ndarray:
    """Per-pixel (du, dv, depth, dh, dw, dl) of the nearest GT by projected center."""
    centers = np.array([g.box.center for g in gts])
    uvc, _ = project_points(cam, centers)
    d2 = (u[..., None] - uvc[:, 0]) ** 2 + (v[..., None] - uvc[:, 1]) ** 2
    near = np.argmin(d2, axis=-1)
    du = u - uvc[near, 0]
    dv = v - uvc[near, 1]
    depth = centers[near, 2]
    dims = np.array([g.box.dims for g in gts])
    prior = np.array([DIM_PRIORS[g.category][0] for g in gts])
    rel = (dims - prior)[near]
    return np.stack([du, dv, depth, rel[..., 0], rel[..., 1], rel[..., 2]], axis=-1)


def encode_quantities(q: np.ndarray, channels: int) -> np.ndarray:
    """Sinusoidal channel encoding of the six oracle quantities."""
    scaled = np.stack(
        [
            np.clip(q[..., 0] / _OFFSET_SCALE, -1.5, 1.5),
            np.clip(q[..., 1] / _OFFSET_SCALE, -1.5, 1.5),
            (q[..., 2] - _DEPTH_CENTER) / _DEPTH_SCALE,
            q[..., 3] / _DIM_SCALE,
            q[..., 4] / _DIM_SCALE,
            q[..., 5] / _DIM_SCALE,
        ],
        axis=-1,
    )
    feats = [np.sin(scaled), np.cos(scaled)]
    # finer frequency for the offsets and depth, which carry the localization signal
    feats.append(np.sin(3.0 * scaled[..., :3]))
    feats.append(np.cos(3.0 * scaled[..., 2:3]))
    base = np.concatenate(feats, axis=-1)  # 16 channels
    if channels <= base.shape[-1]:
        return base[..., :channels]
    reps = []
    k = 5.0
    while base.shape[-1] + sum(r.shape[-1] for r in reps) < channels:
        reps.append(np.sin(k * scaled))
        k += 2.0
    return np.concatenate([base, *reps], axis=-1)[..., :channels]


def oracle_feature_map(gts: list[GroundTruth], cam: CameraModel, cfg: SceneConfig, rng) -> FeatureMap:
    w, h = cam.image_size
    hh, ww = int(math.ceil(h / cfg.stride)), int(math.ceil(w / cfg.stride))
    noise = rng.normal(0.0, cfg.feature_noise, size=(hh, ww, cfg.channels))
    if not cfg.appearance or not gts:
        return FeatureMap(np.zeros((hh, ww, cfg.channels)), cfg.stride, (w, h))
    v, u = np.meshgrid(np.arange(hh) * cfg.stride, np.arange(ww) * cfg.stride, indexing="ij")
    q = _oracle_quantities(u.astype(float), v.astype(float), gts, cam)
    data = encode_quantities(q, cfg.channels) + noise
    return FeatureMap(data, cfg.stride, (w, h))


def generate_scene(cfg: SceneConfig, index: int = 0) -> SyntheticScene:
    rng = scene_rng(cfg.seed, index)
    cam = cfg.camera
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    gts: list[GroundTruth] = []
    tries = 0
    while len(gts) < n and tries < cfg.max_retries * max(n, 1):
        tries += 1
        g = _sample_gt(rng, cfg, cam)
        if g is None:
            continue
        if any(iou_bev(g.box, o.box) > cfg.max_bev_iou for o in gts):
            continue
        gts.append(g)
    anchors = [_noisy_anchor(rng, g.box, cfg) for g in gts]
    fm = oracle_feature_map(gts, cam, cfg, rng)
    return SyntheticScene(gts, anchors, cam, fm, frame=f"{index:06d}")


def generate_scenes(cfg: SceneConfig, count: int, start: int = 0) -> list[SyntheticScene]:
    return [generate_scene(cfg, i) for i in range(start, start + count)]


def write_scene(scene: SyntheticScene, out_dir, with_features: bool = True) -> None:
    """KITTI layout: ``label_2/``, ``calib/``, ``pred/`` (anchors) and ``features/`` (TNSR)."""
    out = Path(out_dir)
    for sub in ("label_2", "calib", "pred", "features"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    labels = [box_to_record(g.box, g.bbox2d, truncation=g.truncation, occlusion=g.occlusion) for g in scene.gts]
    (out / "label_2" / f"{scene.frame}.txt").write_text(write_labels(labels))
    (out / "calib" / f"{scene.frame}.txt").write_text(write_calib(scene.cam))
    preds = [box_to_record(a, project_box2d(scene.cam, a)) for a in scene.anchors]
    (out / "pred" / f"{scene.frame}.txt").write_text(write_predictions(preds))
    if with_features:
        tnsr.save(out / "features" / f"{scene.frame}.tnsr", scene.fm.data, "<f4")
