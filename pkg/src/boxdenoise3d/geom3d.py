"""Box geometry in the camera frame: corners, projection and rotated IoU.

Camera frame convention: x right, y down, z forward (meters).  A
:class:`Box3D` stores its *geometric* center; the KITTI bottom-center
convention is handled in :mod:`boxdenoise3d.kitti_io`.

Heading follows KITTI: at ``yaw == 0`` the box length runs along +x and its
width along z.  Positive yaw rotates about the y axis, i.e. a point
``(x', z')`` in the object frame maps to
``(cos(yaw) x' + sin(yaw) z', -sin(yaw) x' + cos(yaw) z')``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AllBehindCamera, ContractViolation

ANGLE_TOL = 1e-9


class Vec3(NamedTuple):
    x: float
    y: float
    z: float


def wrap_angle(a):
    """Map an angle (scalar or array) into [-pi, pi] using atan2."""
    return np.arctan2(np.sin(a), np.cos(a)) if isinstance(a, np.ndarray) else math.atan2(math.sin(a), math.cos(a))


def alpha_from_yaw(yaw: float, center) -> float:
    """Observation angle of an object at ``center`` with heading ``yaw``."""
    return wrap_angle(yaw - math.atan2(center[0], center[2]))


def yaw_from_alpha(alpha: float, center) -> float:
    return wrap_angle(alpha + math.atan2(center[0], center[2]))


@dataclass(frozen=True)
class Box3D:
    """Labeled, scored cuboid. ``dims`` is ``(h, w, l)``."""

    center: Vec3
    dims: tuple[float, float, float]
    yaw: float
    alpha: float = None  # type: ignore[assignment]
    label: int = 0
    score: float = 1.0

    def __post_init__(self):
        c = Vec3(*(float(v) for v in self.center))
        dims = tuple(float(v) for v in self.dims)
        if len(dims) != 3 or not all(d > 0 for d in dims):
            raise ContractViolation(f"box dims must be three positive values, got {self.dims}")
        if not all(math.isfinite(v) for v in c):
            raise ContractViolation(f"box center must be finite, got {self.center}")
        yaw = wrap_angle(float(self.yaw))
        alpha = alpha_from_yaw(yaw, c) if self.alpha is None else wrap_angle(float(self.alpha))
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "alpha", alpha)

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def moved_to(self, center) -> "Box3D":
        """Same box at a new center; alpha is recomputed so it stays consistent with yaw."""
        c = Vec3(*center)
        return replace(self, center=c, alpha=alpha_from_yaw(self.yaw, c))

    def with_dims(self, dims) -> "Box3D":
        return replace(self, dims=tuple(dims))


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    truncated: bool = False

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ContractViolation(f"inverted 2D box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """3x4 projection matrix in pixels plus the image size ``(width, height)``."""

    P: np.ndarray
    image_size: tuple[int, int] = (1242, 375)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64).reshape(3, 4)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ContractViolation("image size must be positive")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]


@dataclass(frozen=True)
class ConvexPolygon2D:
    """Counter-clockwise vertex list in the BEV (x, z) plane."""

    vertices: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    @classmethod
    def from_points(cls, pts) -> "ConvexPolygon2D":
        pts = [tuple(map(float, p)) for p in pts]
        if _signed_area(pts) < 0:
            pts.reverse()
        return cls(tuple(pts))

    @property
    def area(self) -> float:
        return abs(_signed_area(self.vertices))


# Object-frame corner template, (x', y', z') multiples of (l, h, w).
# Indices 0-3 are the bottom face (y = +h/2, since y points down), 4-7 the
# top face, both ordered (+x'+z'), (+x'-z'), (-x'-z'), (-x'+z').
_CORNER_SIGNS = np.array(
    [
        [1, 1, 1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, 1, 1],
        [1, -1, 1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, -1, 1],
    ],
    dtype=np.float64,
)


def corners_array(centers, dims, yaws) -> np.ndarray:
    """Vectorized corners: ``(N, 3), (N, 3) hwl, (N,)`` -> ``(N, 8, 3)``."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(dims, dtype=np.float64).reshape(-1, 3)
    yaws = np.asarray(yaws, dtype=np.float64).reshape(-1)
    half = 0.5 * dims[:, [2, 0, 1]]  # (l, h, w) / 2
    local = _CORNER_SIGNS[None] * half[:, None, :]
    c, s = np.cos(yaws)[:, None], np.sin(yaws)[:, None]
    x = c * local[..., 0] + s * local[..., 2]
    z = -s * local[..., 0] + c * local[..., 2]
    out = np.stack([x, local[..., 1], z], axis=-1)
    return out + centers[:, None, :]


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of ``box`` as an ``(8, 3)`` array (ordering documented above)."""
    return corners_array(box.center, box.dims, box.yaw)[0]


def box_points9(box: Box3D) -> np.ndarray:
    """8 corners followed by the center, ``(9, 3)``."""
    return np.vstack([box_corners(box), np.asarray(box.center)[None]])


def project_points(cam: CameraModel, pts) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection. Returns ``(uv, behind)``; ``uv`` is NaN where ``behind``."""
    pts = np.asarray(pts, dtype=np.float64)
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, 3)
    hom = flat @ cam.P[:, :3].T + cam.P[:, 3]
    depth = hom[:, 2]
    behind = depth <= 0
    safe = np.where(behind, 1.0, depth)
    uv = hom[:, :2] / safe[:, None]
    uv[behind] = np.nan
    return uv.reshape(*shape, 2), behind.reshape(shape)


def clamp_box2d(cam: CameraModel, x0, y0, x1, y1) -> Box2D:
    w, h = cam.image_size
    cx0, cy0 = min(max(x0, 0.0), w), min(max(y0, 0.0), h)
    cx1, cy1 = min(max(x1, 0.0), w), min(max(y1, 0.0), h)
    truncated = (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1)
    return Box2D(float(cx0), float(cy0), float(cx1), float(cy1), bool(truncated))


def project_box2d(cam: CameraModel, box: Box3D) -> Box2D:
    """Image-clamped hull of the in-front projected corners."""
    uv, behind = project_points(cam, box_corners(box))
    if behind.all():
        raise AllBehindCamera(f"box at {box.center} is entirely behind the camera")
    uv = uv[~behind]
    return clamp_box2d(cam, uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


def project_boxes2d(cam: CameraModel, corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project_box2d` over ``(N, 8, 3)`` corners.

    Returns ``(boxes (N, 4), truncated (N,))``.  Boxes with every corner behind
    the camera come back as NaN rows.
    """
    uv, behind = project_points(cam, corners)
    u = np.where(behind, np.nan, uv[..., 0])
    v = np.where(behind, np.nan, uv[..., 1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        raw = np.stack([np.nanmin(u, 1), np.nanmin(v, 1), np.nanmax(u, 1), np.nanmax(v, 1)], axis=1)
    w, h = cam.image_size
    lim = np.array([w, h, w, h], dtype=np.float64)
    clamped = np.clip(raw, 0.0, lim)
    truncated = np.any(clamped != raw, axis=1)
    return clamped, truncated


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def iou_2d_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` xyxy arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def _signed_area(pts: Sequence[Sequence[float]]) -> float:
    n = len(pts)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _clip(subject: list, a, b) -> list:
    # keep the part of ``subject`` strictly left of the directed line a->b
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay

    def side(p):
        return ex * (p[1] - ay) - ey * (p[0] - ax)

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc > 0 > sn) or (sc < 0 < sn):
            t = sc / (sc - sn)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def convex_intersection_area(p: ConvexPolygon2D, q: ConvexPolygon2D) -> float:
    """Area of ``p`` intersected with ``q`` by successive half-plane clipping."""
    if p.area <= 0 or q.area <= 0:
        return 0.0
    poly = list(p.vertices)
    qv = q.vertices
    for i in range(len(qv)):
        poly = _clip(poly, qv[i], qv[(i + 1) % len(qv)])
        if len(poly) < 3:
            return 0.0
    return max(abs(_signed_area(poly)), 0.0)


def bev_polygon(box: Box3D) -> ConvexPolygon2D:
    c = box_corners(box)[:4]
    return ConvexPolygon2D.from_points(c[:, [0, 2]])


def _bev_far_apart(a: Box3D, b: Box3D) -> bool:
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    dx = a.center.x - b.center.x
    dz = a.center.z - b.center.z
    return dx * dx + dz * dz >= (ra + rb) ** 2


def _bev_intersection(a: Box3D, b: Box3D) -> float:
    if _bev_far_apart(a, b):
        return 0.0
    return convex_intersection_area(bev_polygon(a), bev_polygon(b))


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = _bev_intersection(a, b)
    if inter <= 0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return min(inter / union, 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    top = max(a.center.y - a.h / 2, b.center.y - b.h / 2)
    bottom = min(a.center.y + a.h / 2, b.center.y + b.h / 2)
    dy = bottom - top
    if dy <= 0:
        return 0.0
    inter_area = _bev_intersection(a, b)
    if inter_area <= 0:
        return 0.0
    inter = inter_area * dy
    union = a.volume + b.volume - inter
    return min(inter / union, 1.0)


def iou_matrix(a: Sequence[Box3D], b: Sequence[Box3D], metric: str = "3d") -> np.ndarray:
    fn = iou_3d if metric == "3d" else iou_bev
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i, j] = fn(x, y)
    return out
