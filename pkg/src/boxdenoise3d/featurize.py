"""Raw per-proposal inputs for the verification network.

For each proposal three blocks are produced:

* ``geo`` (29,): normalized center (3), dims in meters (3), alpha (1), the
  nine projected points (8 corners then the center) as ``(u/W, v/H)`` pairs
  (18), and the image-clamped 2D box ``(x1/W, y1/H, x2/W, y2/H)`` (4).
* ``pt`` (9, C): feature-map samples at the nine projected points, exact
  zeros for points off the image or behind the camera.
* ``roi`` (196, C): a 14x14 RoIAlign grid over the clamped 2D box, one
  bilinear sample at each cell center.

Feature-map cell ``(i, j)`` sits at pixel ``(j * stride, i * stride)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllBehindCamera, ContractViolation
from .geom3d import Box2D, Box3D, CameraModel, corners_array, project_boxes2d, project_points
from .sampler import NORM

ROI_SIZE = 14
GEO_DIM = 29
N_POINTS = 9


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # (H', W', C)
    stride: float = 4.0
    image_size: tuple[int, int] = (1242, 375)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3:
            raise ContractViolation(f"feature map must be (H, W, C), got shape {d.shape}")
        w, h = self.image_size
        if d.shape[0] * self.stride < h or d.shape[1] * self.stride < w:
            raise ContractViolation("feature map does not cover the image")
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, image_size=(1242, 375), channels=64, stride=4.0) -> "FeatureMap":
        w, h = image_size
        hh, ww = int(np.ceil(h / stride)), int(np.ceil(w / stride))
        return cls(np.zeros((hh, ww, channels)), stride, tuple(image_size))


@dataclass(frozen=True, eq=False)
class ProposalFeatures:
    geo: np.ndarray
    pt: np.ndarray
    roi: np.ndarray


def _bilinear(fm: FeatureMap, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Clamped bilinear lookup at pixel coordinates; returns ``(n, C)``."""
    data = fm.data
    hh, ww = data.shape[:2]
    fx = np.clip(u / fm.stride, 0.0, ww - 1)
    fy = np.clip(v / fm.stride, 0.0, hh - 1)
    x0 = np.minimum(np.floor(fx).astype(np.int64), ww - 1)
    y0 = np.minimum(np.floor(fy).astype(np.int64), hh - 1)
    x1 = np.minimum(x0 + 1, ww - 1)
    y1 = np.minimum(y0 + 1, hh - 1)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    top = data[y0, x0] * (1 - ax) + data[y0, x1] * ax
    bot = data[y1, x0] * (1 - ax) + data[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def _inside(fm: FeatureMap, u, v) -> np.ndarray:
    w, h = fm.image_size
    with np.errstate(invalid="ignore"):
        return (u >= 0) & (u <= w) & (v >= 0) & (v <= h)


def sample_points(fm: FeatureMap, uv: np.ndarray) -> np.ndarray:
    """Vectorized :func:`point_sample` over ``(n, 2)`` pixel coordinates (NaN -> zeros)."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    inside = _inside(fm, u, v)
    out = np.zeros((len(uv), fm.channels), dtype=np.float64)
    if inside.any():
        out[inside] = _bilinear(fm, u[inside], v[inside])
    return out


def point_sample(fm: FeatureMap, u: float, v: float) -> np.ndarray:
    return sample_points(fm, np.array([[u, v]]))[0]


def roi_grid(boxes: np.ndarray, size: int = ROI_SIZE) -> np.ndarray:
    """Cell-center pixel coordinates ``(n, size*size, 2)`` for ``(n, 4)`` xyxy boxes, row-major."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    t = (np.arange(size) + 0.5) / size
    xs = boxes[:, 0:1] + t[None] * (boxes[:, 2:3] - boxes[:, 0:1])
    ys = boxes[:, 1:2] + t[None] * (boxes[:, 3:4] - boxes[:, 1:2])
    gx = np.broadcast_to(xs[:, None, :], (len(boxes), size, size))
    gy = np.broadcast_to(ys[:, :, None], (len(boxes), size, size))
    return np.stack([gx, gy], axis=-1).reshape(len(boxes), size * size, 2)


def roi_align(fm: FeatureMap, box: Box2D, size: int = ROI_SIZE) -> np.ndarray:
    """``(size, size, C)`` block of bilinear samples at the cell centers of ``box``."""
    grid = roi_grid(box.as_array()[None], size)[0]
    return _bilinear(fm, grid[:, 0], grid[:, 1]).reshape(size, size, fm.channels)


def roi_align_batch(fm: FeatureMap, boxes: np.ndarray, size: int = ROI_SIZE) -> np.ndarray:
    grid = roi_grid(boxes, size)
    flat = grid.reshape(-1, 2)
    return _bilinear(fm, flat[:, 0], flat[:, 1]).reshape(len(grid), size * size, fm.channels)


def _as_arrays(boxes):
    centers = np.array([b.center for b in boxes], dtype=np.float64).reshape(-1, 3)
    dims = np.array([b.dims for b in boxes], dtype=np.float64).reshape(-1, 3)
    yaws = np.array([b.yaw for b in boxes], dtype=np.float64)
    alphas = np.array([b.alpha for b in boxes], dtype=np.float64)
    return centers, dims, yaws, alphas


def geo_and_points(centers, dims, yaws, alphas, cam: CameraModel):
    """Vectorized geometry block.

    Returns ``(geo (N, 29), uv (N, 9, 2), box2d (N, 4))``.  Raises
    :class:`AllBehindCamera` if any proposal has no corner in front.
    """
    corners = corners_array(centers, dims, yaws)
    pts9 = np.concatenate([corners, np.asarray(centers, dtype=np.float64)[:, None, :]], axis=1)
    uv, behind = project_points(cam, pts9)
    box2d, _ = project_boxes2d(cam, corners)
    if np.isnan(box2d).any():
        raise AllBehindCamera("proposal entirely behind the camera")
    w, h = cam.image_size
    scale = np.array([w, h], dtype=np.float64)
    uvn = np.where(behind[..., None], -1.0, uv / scale)
    geo = np.concatenate(
        [
            np.asarray(centers) / NORM,
            np.asarray(dims),
            np.asarray(alphas)[:, None],
            uvn.reshape(len(uvn), 18),
            box2d / np.array([w, h, w, h], dtype=np.float64),
        ],
        axis=1,
    )
    return geo, uv, box2d


def geo_vector(box: Box3D, cam: CameraModel) -> np.ndarray:
    geo, _, _ = geo_and_points(*_as_arrays([box]), cam)
    return geo[0]


def build_features_batch(centers, dims, yaws, alphas, cam: CameraModel, fm: FeatureMap):
    """``(geo (N, 29), pt (N, 9, C), roi (N, 196, C))`` for many proposals at once."""
    geo, uv, box2d = geo_and_points(centers, dims, yaws, alphas, cam)
    n = len(geo)
    pt = sample_points(fm, uv.reshape(-1, 2)).reshape(n, N_POINTS, fm.channels)
    roi = roi_align_batch(fm, box2d)
    return geo, pt, roi


def build_features(box: Box3D, cam: CameraModel, fm: FeatureMap) -> ProposalFeatures:
    geo, pt, roi = build_features_batch(*_as_arrays([box]), cam, fm)
    return ProposalFeatures(geo[0], pt[0], roi[0])


def features_for_boxes(boxes, cam: CameraModel, fm: FeatureMap):
    return build_features_batch(*_as_arrays(boxes), cam, fm)
