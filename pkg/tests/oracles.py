"""Independent reference computations used only by the tests.

Nothing in here imports the code paths it is used to check.
"""
import itertools
import math

import numpy as np


def rotated_footprint(cx, cz, l, w, yaw):
    """BEV rectangle corners built with an explicit 2x2 rotation matrix."""
    R = np.array([[math.cos(yaw), math.sin(yaw)], [-math.sin(yaw), math.cos(yaw)]])
    local = np.array([[l / 2, w / 2], [l / 2, -w / 2], [-l / 2, -w / 2], [-l / 2, w / 2]])
    return local @ R.T + np.array([cx, cz])


def _row_extent(poly, zs):
    """x-extent of a convex polygon on each horizontal scanline ``z``."""
    lo = np.full(zs.shape, np.inf)
    hi = np.full(zs.shape, -np.inf)
    n = len(poly)
    for i in range(n):
        (x0, z0), (x1, z1) = poly[i], poly[(i + 1) % n]
        if z0 == z1:
            continue
        t = (zs - z0) / (z1 - z0)
        ok = (t >= 0) & (t <= 1)
        x = x0 + t * (x1 - x0)
        lo = np.where(ok, np.minimum(lo, x), lo)
        hi = np.where(ok, np.maximum(hi, x), hi)
    return lo, hi


def raster_intersection_area(p, q, res=1e-3):
    """Scanline rasterization at row spacing ``res`` with exact per-row extents."""
    z0 = max(p[:, 1].min(), q[:, 1].min())
    z1 = min(p[:, 1].max(), q[:, 1].max())
    if z1 <= z0:
        return 0.0
    n = int(math.ceil((z1 - z0) / res))
    zs = z0 + (np.arange(n) + 0.5) * (z1 - z0) / n
    plo, phi = _row_extent(p, zs)
    qlo, qhi = _row_extent(q, zs)
    width = np.clip(np.minimum(phi, qhi) - np.maximum(plo, qlo), 0, None)
    return float(width.sum() * (z1 - z0) / n)


def grid_intersection_area(p, q, res=1e-3):
    """Plain 2D point-in-polygon rasterization (slow; small polygons only)."""
    lo = np.minimum(p.min(0), q.min(0))
    hi = np.maximum(p.max(0), q.max(0))
    xs = np.arange(lo[0] + res / 2, hi[0], res)
    zs = np.arange(lo[1] + res / 2, hi[1], res)
    X, Z = np.meshgrid(xs, zs)

    def inside(poly):
        s = np.ones_like(X, dtype=bool)
        area = 0.0
        for i in range(len(poly)):
            a, b = poly[i], poly[(i + 1) % len(poly)]
            area += a[0] * b[1] - b[0] * a[1]
        sign = 1 if area > 0 else -1
        for i in range(len(poly)):
            a, b = poly[i], poly[(i + 1) % len(poly)]
            cross = (b[0] - a[0]) * (Z - a[1]) - (b[1] - a[1]) * (X - a[0])
            s &= sign * cross >= 0
        return s

    return float((inside(p) & inside(q)).sum() * res * res)


def raster_iou_3d(a, b, res=1e-3):
    """3D IoU from the scanline BEV area times the analytic vertical overlap.

    ``a``/``b`` are (cx, cy, cz, h, w, l, yaw) tuples.
    """
    pa = rotated_footprint(a[0], a[2], a[5], a[4], a[6])
    pb = rotated_footprint(b[0], b[2], b[5], b[4], b[6])
    area = raster_intersection_area(pa, pb, res)
    dy = min(a[1] + a[3] / 2, b[1] + b[3] / 2) - max(a[1] - a[3] / 2, b[1] - b[3] / 2)
    inter = area * max(dy, 0.0)
    va = a[3] * a[4] * a[5]
    vb = b[3] * b[4] * b[5]
    return inter / (va + vb - inter)


def raster_iou_bev(a, b, res=1e-3):
    pa = rotated_footprint(a[0], a[2], a[5], a[4], a[6])
    pb = rotated_footprint(b[0], b[2], b[5], b[4], b[6])
    area = raster_intersection_area(pa, pb, res)
    return area / (a[4] * a[5] + b[4] * b[5] - area)


def project_dense(P, pts):
    """Homogeneous projection written out as an explicit matrix product."""
    P = np.asarray(P, dtype=float)
    out = []
    for x, y, z in pts:
        h = [sum(P[r][c] * v for c, v in enumerate((x, y, z, 1.0))) for r in range(3)]
        out.append((h[0] / h[2], h[1] / h[2]))
    return np.array(out)


def brute_force_assignment(cost):
    cost = np.asarray(cost)
    n = cost.shape[0]
    best = math.inf
    best_perm = None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best, best_perm = total, perm
    return best, best_perm


def pr_curve_ap_r40(flags_scores, n_gt):
    """Interpolated 40-point AP by brute force over score thresholds.

    ``flags_scores`` is a list of ``(score, is_tp)`` for the non-ignored
    detections.  For every candidate threshold the TP/FP counts are
    re-counted from scratch; the interpolated precision at recall ``r`` is the
    best precision among thresholds whose recall reaches ``r``.
    """
    if n_gt == 0:
        return 0.0
    points = []
    for t in sorted({s for s, _ in flags_scores}):
        tp = sum(1 for s, f in flags_scores if f and s >= t)
        fp = sum(1 for s, f in flags_scores if not f and s >= t)
        points.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(1, 41):
        r = i / 40
        reach = [p for rec, p in points if rec >= r - 1e-12]
        total += max(reach) if reach else 0.0
    return total / 40 * 100
