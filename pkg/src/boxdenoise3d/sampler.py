"""Local BEV grid around a bottom-up anchor and position normalization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .geom3d import Box3D

# typical detection range used to normalize (x, y, z) positions, meters
NORM = np.array([50.0, 2.0, 80.0])

_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class GridSpec:
    range_m: float = 1.5
    stride_m: float = 0.75

    def __post_init__(self):
        if not (self.range_m > 0 and self.stride_m > 0):
            raise ContractViolation(f"grid range and stride must be positive, got {self}")

    @property
    def half_steps(self) -> int:
        # tolerate float noise such as 1.5 / 0.3 == 4.999...
        return int(math.floor(self.range_m / self.stride_m + _FLOOR_EPS))

    @property
    def count(self) -> int:
        return (2 * self.half_steps + 1) ** 2


def grid_offsets(spec: GridSpec) -> np.ndarray:
    """Inclusive symmetric ``(dx, dz)`` offsets, row-major from the most negative corner."""
    k = np.arange(-spec.half_steps, spec.half_steps + 1) * spec.stride_m
    dx, dz = np.meshgrid(k, k, indexing="ij")
    return np.stack([dx.ravel(), dz.ravel()], axis=1)


def sample_proposals(anchor: Box3D, spec: GridSpec) -> list[Box3D]:
    """Copies of ``anchor`` shifted to every grid vertex; only the center changes.

    ``alpha`` is carried over unchanged from the anchor.
    """
    cx, cy, cz = anchor.center
    out = []
    for dx, dz in grid_offsets(spec):
        if dx == 0 and dz == 0:
            out.append(anchor)
        else:
            out.append(Box3D((cx + dx, cy, cz + dz), anchor.dims, anchor.yaw, anchor.alpha, anchor.label, anchor.score))
    return out


def center_index(spec: GridSpec) -> int:
    """Position of the zero offset in :func:`grid_offsets` order."""
    return spec.count // 2


def normalize_position(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64) / NORM


def unnormalize_position(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64) * NORM
