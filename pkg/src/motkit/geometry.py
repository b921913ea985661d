"""Box geometry primitives shared by every other module.

Boxes are axis-aligned in continuous pixel coordinates, parameterized as
top-left corner plus size (the MOT-Challenge file convention). Motion
between two boxes is encoded as width/height-normalized shifts plus
log-scale changes, which is exactly invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y) and size (w, h), in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} must be finite, got {v}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox size must be positive, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class MotionDelta:
    """Relative box change: shifts normalized by the previous size, log scale ratios."""

    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        for name in ("dx", "dy", "dw", "dh"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"MotionDelta.{name} must be finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dw, self.dh)


@dataclass(frozen=True)
class Detection:
    """A detector output: box plus confidence in [0, 1]."""

    box: BBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class SearchRegion:
    """A search window: the in-frame (clipped) box plus the unclipped geometry.

    Grid mapping is always done on ``unclipped`` so that offsets decoded near
    frame edges stay consistent with the window's true center.
    """

    box: BBox
    unclipped: BBox


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def fraction_inside(box: BBox, frame_w: float, frame_h: float) -> float:
    """Fraction of ``box``'s area lying inside the frame rectangle."""
    ix = min(box.x2, frame_w) - max(box.x, 0.0)
    iy = min(box.y2, frame_h) - max(box.y, 0.0)
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / box.area


def clip_to_frame(box: BBox, frame_w: float, frame_h: float) -> Optional[BBox]:
    """The part of ``box`` inside the frame rectangle, or None if disjoint."""
    x = max(box.x, 0.0)
    y = max(box.y, 0.0)
    w = min(box.x2, frame_w) - x
    h = min(box.y2, frame_h) - y
    if w <= 0 or h <= 0:
        return None
    return BBox(x, y, w, h)


def encode_motion(prev: BBox, nxt: BBox) -> MotionDelta:
    """Encode the change from ``prev`` to ``nxt`` as a normalized motion vector."""
    return MotionDelta(
        dx=(nxt.x - prev.x) / prev.w,
        dy=(nxt.y - prev.y) / prev.h,
        dw=math.log(nxt.w / prev.w),
        dh=math.log(nxt.h / prev.h),
    )


def decode_motion(prev: BBox, m: MotionDelta) -> BBox:
    """Apply a motion vector to ``prev``; exact inverse of :func:`encode_motion`."""
    return BBox(
        x=prev.x + m.dx * prev.w,
        y=prev.y + m.dy * prev.h,
        w=prev.w * math.exp(m.dw),
        h=prev.h * math.exp(m.dh),
    )


def expand_search_region(b: BBox, r: float, frame_w: float, frame_h: float) -> SearchRegion:
    """Expand ``b`` by factor ``r`` about its center and clip to the frame.

    The unclipped geometry is retained because response-grid coordinates are
    anchored to it, not to the clipped box.
    """
    if r <= 1.0:
        raise ValueError(f"expansion factor must be > 1, got {r}")
    w = r * b.w
    h = r * b.h
    unclipped = BBox(b.cx - w / 2.0, b.cy - h / 2.0, w, h)
    x0 = max(0.0, unclipped.x)
    y0 = max(0.0, unclipped.y)
    x1 = min(float(frame_w), unclipped.x2)
    y1 = min(float(frame_h), unclipped.y2)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("search region lies entirely outside the frame")
    return SearchRegion(box=BBox(x0, y0, x1 - x0, y1 - y0), unclipped=unclipped)
