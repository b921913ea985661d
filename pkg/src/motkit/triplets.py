"""Training-example sampling for the learned motion head.

Proposals at frame ``t`` are labeled by identity continuity at ``t + delta``:

* ``P`` (positive): the proposal overlaps a ground-truth box, and that
  identity is still visible at the later frame with its center inside the
  proposal's expanded search region. Only positives carry a motion target.
* ``H`` (hard): the proposal overlaps a ground-truth box but the identity has
  left the search region or is no longer visible — the matcher should report
  low visibility rather than a location.
* ``N`` (negative): the proposal does not overlap any ground-truth box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox, MotionDelta, SearchRegion, encode_motion, expand_search_region, iou

LABEL_POSITIVE = "P"
LABEL_HARD = "H"
LABEL_NEGATIVE = "N"
ALL_LABELS = (LABEL_POSITIVE, LABEL_HARD, LABEL_NEGATIVE)

# Ground truth is a per-frame mapping {identity: box} listing visible objects.
FrameBoxes = Mapping[int, BBox]


@dataclass(frozen=True)
class TripletParams:
    match_iou: float = 0.5
    jitter_frac: float = 0.1
    jittered_per_gt: int = 3
    negatives_per_frame: int = 3
    search_expansion: float = 2.0
    delta: int = 1

    def __post_init__(self):
        if not 0.0 < self.match_iou < 1.0:
            raise ValueError("match_iou must be in (0, 1)")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")
        if self.search_expansion <= 1.0:
            raise ValueError("search_expansion must exceed 1")


@dataclass(frozen=True)
class Triplet:
    frame: int
    label: str
    proposal: BBox
    search: SearchRegion
    identity: Optional[int] = None
    target: Optional[MotionDelta] = None

    def __post_init__(self):
        if self.label not in ALL_LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if (self.label == LABEL_POSITIVE) != (self.target is not None):
            raise ValueError("exactly the positive triplets carry a motion target")


def label_proposal(
    proposal: BBox,
    frame: int,
    gt_t: FrameBoxes,
    gt_next: FrameBoxes,
    frame_w: float,
    frame_h: float,
    params: TripletParams,
) -> Triplet:
    """Classify one proposal against ground truth at ``frame`` and ``frame + delta``."""
    search = expand_search_region(proposal, params.search_expansion, frame_w, frame_h)
    best_id, best_iou = None, 0.0
    for identity, box in gt_t.items():
        overlap = iou(proposal, box)
        if overlap > best_iou:
            best_id, best_iou = identity, overlap
    if best_id is None or best_iou < params.match_iou:
        return Triplet(frame, LABEL_NEGATIVE, proposal, search)
    nxt = gt_next.get(best_id)
    if nxt is not None and search.unclipped.contains(nxt.cx, nxt.cy):
        return Triplet(frame, LABEL_POSITIVE, proposal, search, best_id, encode_motion(proposal, nxt))
    return Triplet(frame, LABEL_HARD, proposal, search, best_id)


def _jitter(box: BBox, frac: float, rng: np.random.Generator) -> BBox:
    dx, dy = rng.uniform(-frac, frac, size=2) * (box.w, box.h)
    sw, sh = np.exp(rng.uniform(-frac, frac, size=2))
    w, h = box.w * sw, box.h * sh
    return BBox(box.cx + dx - w / 2.0, box.cy + dy - h / 2.0, w, h)


def _random_box(frame_w: float, frame_h: float, rng: np.random.Generator) -> BBox:
    w = rng.uniform(frame_w / 20.0, frame_w / 4.0)
    h = rng.uniform(frame_h / 20.0, frame_h / 4.0)
    x = rng.uniform(0.0, frame_w - w)
    y = rng.uniform(0.0, frame_h - h)
    return BBox(x, y, w, h)


def _intersects_frame(box: BBox, frame_w: float, frame_h: float) -> bool:
    return box.x < frame_w and box.x2 > 0 and box.y < frame_h and box.y2 > 0


def sample_triplets(
    gt_by_frame: Mapping[int, FrameBoxes],
    frame_w: float,
    frame_h: float,
    params: TripletParams = TripletParams(),
    rng: Optional[np.random.Generator] = None,
    labels: Sequence[str] = ALL_LABELS,
) -> list[Triplet]:
    """Sample labeled proposals from every frame pair ``(t, t + delta)``.

    Proposals are the ground-truth boxes themselves, jittered copies, and
    uniformly random clutter boxes. ``labels`` restricts which classes are
    kept, supporting training-set ablations.
    """
    for label in labels:
        if label not in ALL_LABELS:
            raise ValueError(f"unknown label {label!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    keep = frozenset(labels)
    out: list[Triplet] = []
    for frame in sorted(gt_by_frame):
        gt_t = gt_by_frame[frame]
        gt_next = gt_by_frame.get(frame + params.delta)
        if gt_next is None or not gt_t:
            continue
        proposals: list[BBox] = []
        for identity in sorted(gt_t):
            box = gt_t[identity]
            proposals.append(box)
            for _ in range(params.jittered_per_gt):
                proposals.append(_jitter(box, params.jitter_frac, rng))
        for _ in range(params.negatives_per_frame):
            proposals.append(_random_box(frame_w, frame_h, rng))
        for proposal in proposals:
            if not _intersects_frame(proposal, frame_w, frame_h):
                continue
            triplet = label_proposal(proposal, frame, gt_t, gt_next, frame_w, frame_h, params)
            if triplet.label in keep:
                out.append(triplet)
    return out
