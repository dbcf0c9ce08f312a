"""
Box primitives: axis-aligned boxes, IoU and feature-pyramid level binning.

Boxes are ``[x1, y1, x2, y2]`` in pixels, x to the right and y down.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Tuple, Union

import numpy as np

from apps.core.exceptions import DegenerateBoxError, InvalidBoxError, ValidationError


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise InvalidBoxError(f"Box coordinates must be finite, got {list(coords)}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InvalidBoxError(f"Box corners out of order: {list(coords)}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> 'BBox':
        if len(values) != 4:
            raise InvalidBoxError(f"Box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> 'BBox':
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    def to_dict(self) -> dict:
        return {'x1': self.x1, 'y1': self.y1, 'x2': self.x2, 'y2': self.y2}


def box_from_center(cx: float, cy: float, width: float, height: float) -> BBox:
    return BBox(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)


class Point2(NamedTuple):
    x: float
    y: float


def center(box: BBox) -> Point2:
    return Point2((box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0)


def manhattan_center_distance(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = center(a), center(b)
    return abs(ax - bx) + abs(ay - by)


def box_scale(box: BBox) -> float:
    """Square root of the box area."""
    return math.sqrt(box.area)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


BoxesLike = Union[np.ndarray, Iterable[BBox]]


def boxes_to_array(boxes: BoxesLike) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64, copy=False)
    rows = [b.as_list() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def iou_matrix(boxes1: BoxesLike, boxes2: BoxesLike) -> np.ndarray:
    """Pairwise IoU, shape ``[len(boxes1), len(boxes2)]``; zero-union pairs score 0."""
    b1 = boxes_to_array(boxes1)
    b2 = boxes_to_array(boxes2)

    area1 = (b1[:, 2] - b1[:, 0]) * (b1[:, 3] - b1[:, 1])
    area2 = (b2[:, 2] - b2[:, 0]) * (b2[:, 3] - b2[:, 1])

    lt = np.maximum(b1[:, None, :2], b2[None, :, :2])
    rb = np.minimum(b1[:, None, 2:], b2[None, :, 2:])

    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    union = area1[:, None] + area2[None, :] - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


@dataclass(frozen=True)
class LevelRanges:
    """
    Half-open scale ranges ``(lower, upper]`` per pyramid level; the last upper bound is +inf.
    """

    uppers: Tuple[float, ...] = (64.0, 128.0, 256.0, 512.0, math.inf)
    names: Tuple[str, ...] = field(default=('C3', 'C4', 'C5', 'C6', 'C7'))

    def __post_init__(self):
        if len(self.uppers) != len(self.names) or not self.uppers:
            raise ValidationError("Level ranges need one name per upper bound",
                                  field_errors={'level_ranges': ['length mismatch']})
        if any(b <= a for a, b in zip(self.uppers, self.uppers[1:])) or self.uppers[0] <= 0:
            raise ValidationError("Level upper bounds must be positive and strictly increasing",
                                  field_errors={'level_ranges': [str(list(self.uppers))]})
        if not math.isinf(self.uppers[-1]):
            raise ValidationError("Last level must be unbounded",
                                  field_errors={'level_ranges': [str(list(self.uppers))]})

    @classmethod
    def from_uppers(cls, finite_uppers: Sequence[float]) -> 'LevelRanges':
        uppers = tuple(float(u) for u in finite_uppers) + (math.inf,)
        names = tuple(f"C{3 + i}" for i in range(len(uppers)))
        return cls(uppers=uppers, names=names)


DEFAULT_LEVEL_RANGES = LevelRanges()


def assign_level(scale: float, ranges: LevelRanges = DEFAULT_LEVEL_RANGES) -> str:
    if not scale > 0:
        raise DegenerateBoxError(f"Level assignment needs a positive scale, got {scale}")
    for upper, name in zip(ranges.uppers, ranges.names):
        if scale <= upper:
            return name
    return ranges.names[-1]
