"""KITTI label / calibration / prediction files and difficulty levels.

Label lines carry 15 whitespace-separated fields (16 with a trailing score)::

    type trunc occ alpha x1 y1 x2 y2 h w l X Y Z rot_y [score]

``X Y Z`` is the *bottom* center of the box (y points down), whereas
:class:`~boxdenoise3d.geom3d.Box3D` uses the geometric center, so
:func:`record_to_box` / :func:`box_to_record` shift y by ``h / 2``.
"""
from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import MalformedLine, MalformedMatrix, MissingKey, MissingScore
from .geom3d import Box2D, Box3D, CameraModel, Vec3

CLASSES = ("Car", "Pedestrian", "Cyclist")
CLASS_TO_ID = {name: i for i, name in enumerate(CLASSES)}
DONT_CARE = "DontCare"

DECIMALS = 6


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min bbox height px, max occlusion, max truncation) per level, devkit values.
DIFFICULTY_THRESHOLDS = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


@dataclass(frozen=True)
class LabelRecord:
    type: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: Box2D
    dims: tuple[float, float, float]
    location: Vec3
    yaw: float
    score: Optional[float] = None

    @property
    def is_dont_care(self) -> bool:
        return self.type == DONT_CARE


def _fields_to_record(parts: list[str], line_no: int) -> LabelRecord:
    if len(parts) not in (15, 16):
        raise MalformedLine(line_no, f"expected 15 or 16 fields, got {len(parts)}")
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise MalformedLine(line_no, f"non-numeric field ({exc})") from None
    if not all(math.isfinite(v) for v in nums):
        raise MalformedLine(line_no, "non-finite field")
    typ = parts[0]
    occ = nums[1]
    if occ != int(occ):
        raise MalformedLine(line_no, f"occlusion must be an integer, got {parts[2]}")
    x1, y1, x2, y2 = nums[3:7]
    dims = tuple(nums[7:10])
    if typ != DONT_CARE and not all(d > 0 for d in dims):
        raise MalformedLine(line_no, f"non-positive dimensions {dims}")
    try:
        bbox = Box2D(x1, y1, x2, y2)
    except ValueError:
        raise MalformedLine(line_no, "inverted 2D box") from None
    return LabelRecord(
        type=typ,
        truncation=nums[0],
        occlusion=int(occ),
        alpha=nums[2],
        bbox2d=bbox,
        dims=dims,  # type: ignore[arg-type]
        location=Vec3(*nums[10:13]),
        yaw=nums[13],
        score=nums[14] if len(parts) == 16 else None,
    )


def parse_label_file(text: str) -> list[LabelRecord]:
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        records.append(_fields_to_record(parts, line_no))
    return records


def _fmt(v: float) -> str:
    s = f"{v:.{DECIMALS}f}"
    return "0.000000" if s == "-0.000000" else s


def format_record(rec: LabelRecord, with_score: bool = True) -> str:
    b = rec.bbox2d
    fields = [
        rec.type,
        _fmt(rec.truncation),
        str(int(rec.occlusion)),
        _fmt(rec.alpha),
        _fmt(b.x_min),
        _fmt(b.y_min),
        _fmt(b.x_max),
        _fmt(b.y_max),
        *(_fmt(d) for d in rec.dims),
        *(_fmt(v) for v in rec.location),
        _fmt(rec.yaw),
    ]
    if with_score:
        if rec.score is None:
            raise MissingScore(f"{rec.type} record at {tuple(rec.location)} has no score")
        fields.append(_fmt(rec.score))
    return " ".join(fields)


def write_predictions(records: Iterable[LabelRecord]) -> str:
    """Serialize scored records as 16-field lines (6 decimals)."""
    lines = [format_record(r, with_score=True) for r in records]
    return "".join(line + "\n" for line in lines)


def write_labels(records: Iterable[LabelRecord]) -> str:
    return "".join(format_record(r, with_score=False) + "\n" for r in records)


def parse_calib_file(text: str, key: str = "P2", image_size=(1242, 375)) -> CameraModel:
    for line in text.splitlines():
        if ":" not in line:
            continue
        name, _, rest = line.partition(":")
        if name.strip() != key:
            continue
        try:
            vals = [float(v) for v in rest.split()]
        except ValueError:
            raise MalformedMatrix(f"{key}: non-numeric entry") from None
        if len(vals) != 12:
            raise MalformedMatrix(f"{key}: expected 12 numbers, got {len(vals)}")
        return CameraModel(np.array(vals).reshape(3, 4), tuple(image_size))
    raise MissingKey(f"calibration has no {key!r} line")


def write_calib(cam: CameraModel, key: str = "P2") -> str:
    vals = " ".join(f"{v:.12e}" for v in cam.P.reshape(-1))
    lines = [f"P0: {vals}", f"P1: {vals}", f"{key}: {vals}", f"P3: {vals}"]
    eye = "1 0 0 0 1 0 0 0 1"
    lines.append(f"R0_rect: {eye}")
    return "\n".join(lines) + "\n"


def _meets(rec: LabelRecord, level: Difficulty, thresholds=None) -> bool:
    min_h, max_occ, max_trunc = (thresholds or DIFFICULTY_THRESHOLDS)[level]
    return rec.bbox2d.height >= min_h and rec.occlusion <= max_occ and rec.truncation <= max_trunc


def assign_difficulty(rec: LabelRecord, thresholds=None) -> Difficulty:
    """Strictest KITTI level a record qualifies for."""
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if _meets(rec, level, thresholds):
            return level
    return Difficulty.IGNORED


def record_to_box(rec: LabelRecord, score: Optional[float] = None) -> Box3D:
    h = rec.dims[0]
    x, y, z = rec.location
    label = CLASS_TO_ID.get(rec.type, -1)
    s = rec.score if score is None else score
    return Box3D((x, y - h / 2, z), rec.dims, rec.yaw, alpha=rec.alpha, label=label, score=1.0 if s is None else s)


def box_to_record(box: Box3D, bbox2d: Box2D, score: Optional[float] = None, truncation=0.0, occlusion=0) -> LabelRecord:
    h = box.dims[0]
    name = CLASSES[box.label] if 0 <= box.label < len(CLASSES) else DONT_CARE
    return LabelRecord(
        type=name,
        truncation=float(truncation),
        occlusion=int(occlusion),
        alpha=box.alpha,
        bbox2d=replace(bbox2d, truncated=False),
        dims=box.dims,
        location=Vec3(box.center.x, box.center.y + h / 2, box.center.z),
        yaw=box.yaw,
        score=box.score if score is None else score,
    )


def read_dir(path, suffix=".txt") -> dict[str, str]:
    """Map frame id (file stem) -> file text for every ``*.txt`` in ``path``."""
    out = {}
    for name in sorted(os.listdir(path)):
        if name.endswith(suffix):
            out[name[: -len(suffix)]] = Path(path, name).read_text()
    return out
