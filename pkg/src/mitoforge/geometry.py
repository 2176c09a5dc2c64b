"""Axis-aligned box arithmetic: IoU, clipping and non-maximum suppression.

Boxes are stored as real-valued corners (x_min, y_min, x_max, y_max) with
area = (x_max - x_min) * (y_max - y_min). All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {v!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box: ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class ScoredBox:
    box: BBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score outside [0,1]: {self.score}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, symmetric."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def clip_to_region(box: BBox, region: BBox) -> Optional[BBox]:
    """Intersection rectangle of ``box`` with ``region``, or None if empty."""
    x_min = max(box.x_min, region.x_min)
    y_min = max(box.y_min, region.y_min)
    x_max = min(box.x_max, region.x_max)
    y_max = min(box.y_max, region.y_max)
    if x_min >= x_max or y_min >= y_max:
        return None
    return BBox(x_min, y_min, x_max, y_max)


def nms(candidates: List[ScoredBox], iou_threshold: float) -> List[ScoredBox]:
    """Greedy per-class non-maximum suppression.

    Boxes are visited in descending score order (ties broken by input order);
    a box is suppressed when a kept box of the same class overlaps it with
    IoU strictly above ``iou_threshold``. Output keeps the visit order.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold outside [0,1]: {iou_threshold}")
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].score)
    kept: List[ScoredBox] = []
    for i in order:
        cand = candidates[i]
        suppressed = any(
            k.class_id == cand.class_id and iou(k.box, cand.box) > iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(cand)
    return kept
