"""Online multi-object tracker: per-frame association solver and matchers.

Each frame is processed in three stages: suppress duplicate detections,
propagate every live track with its motion matcher, then start new tracks
from detections that no propagated track explains. A track whose matcher
reports visibility below ``alpha`` coasts in a lost state — it keeps
searching from its last predicted location with a frozen template — and is
killed after ``tau`` consecutive lost frames.

Matchers share one interface, so photometric, learned, and baseline motion
models are interchangeable behind the same solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import (
    BBox,
    Detection,
    SearchRegion,
    clip_to_frame,
    decode_motion,
    expand_search_region,
    fraction_inside,
    iou,
)
from .mlp import MlpHead
from .regressor import FeatureParams, _normalized_patch
from .response import (
    ABSENT_VISIBILITY,
    DEFAULT_SCALES,
    DEFAULT_STRIDE,
    GridGeometry,
    OracleNoise,
    PenaltyParams,
    crop_pixels,
    decode_response,
    match_template_patch,
    oracle_match,
)

ORACLE_GRID = 15

MATCHER_NAMES = ("oracle", "ncc", "imm", "zero-motion", "kalman")


class TrackState(Enum):
    ACTIVE = "active"
    LOST = "lost"
    KILLED = "killed"


@dataclass(frozen=True)
class TrackerParams:
    alpha: float = 0.4
    beta: float = 0.6
    tau: int = 30
    nms_iou: float = 0.5
    spawn_iou: float = 0.5
    merge_iou: float = 0.6
    support_iou: float = 0.4
    support_patience: int = 3
    search_expansion: float = 2.0
    emit_lost: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError("alpha and beta must be in [0, 1]")
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if not 0.0 < self.merge_iou <= 1.0:
            raise ValueError("merge_iou must be in (0, 1]")
        if not 0.0 <= self.support_iou <= 1.0:
            raise ValueError("support_iou must be in [0, 1]")
        if self.support_patience < 1:
            raise ValueError("support_patience must be at least 1")
        if self.search_expansion <= 1.0:
            raise ValueError("search_expansion must exceed 1")


@dataclass
class FrameInput:
    """Everything the solver may consume for one frame.

    ``raster`` (grayscale image) is required by photometric matchers;
    ``gt`` ({identity: box}) only by the oracle matcher.
    """

    index: int
    detections: list
    raster: Optional[np.ndarray] = None
    gt: Optional[Mapping[int, BBox]] = None


@dataclass
class Track:
    track_id: int
    state: TrackState
    box: BBox
    visibility: float
    lost_frames: int = 0
    # consecutive frames in which no detection overlapped the matched box
    unsupported: int = 0
    template: object = None
    # frame -> (box, score) for frames where this track produced output
    history: dict = field(default_factory=dict)

    @property
    def alive(self) -> bool:
        return self.state is not TrackState.KILLED


def nms(detections: Sequence[Detection], iou_thr: float = 0.5) -> list:
    """Greedy non-maximum suppression, highest confidence first.

    Ties in confidence keep input order. Returns survivors in the order
    they were kept (confidence descending).
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError("iou_thr must be in (0, 1]")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    kept: list[int] = []
    for i in order:
        if all(iou(detections[i].box, detections[j].box) < iou_thr for j in kept):
            kept.append(i)
    return [detections[i] for i in kept]


def spatial_suppress(detections: Sequence[Detection], boxes: Sequence[BBox], iou_thr: float = 0.5) -> list:
    """Drop detections already explained by a propagated track box (IOU >= thr)."""
    return [d for d in detections if all(iou(d.box, b) < iou_thr for b in boxes)]


class Matcher:
    """Motion-model interface used by the solver.

    ``match`` predicts a track's box and visibility in the current frame;
    ``make_template`` builds the appearance payload stored on the track when
    it is (re)acquired. ``begin_frame`` runs once before any track is
    propagated. ``can_start`` lets a matcher veto a birth it could never
    follow up on. The default template is empty.

    ``coasts_with_match`` declares whether the box returned by a
    low-visibility match is still a meaningful motion extrapolation (true
    for a predictive filter) or an argmax over noise that a lost track must
    not adopt (appearance matchers).
    """

    coasts_with_match = False

    def begin_frame(self, frame: FrameInput) -> None:
        pass

    def match(self, track: Track, prev: Optional[FrameInput], curr: FrameInput, detections: Sequence[Detection]):
        raise NotImplementedError

    def make_template(self, track: Track, box: BBox, frame: FrameInput, detections: Sequence[Detection] = ()):
        return None

    def can_start(self, det: Detection, frame: FrameInput) -> bool:
        return True


def _best_detection(box: BBox, detections: Sequence[Detection], skip=frozenset()):
    """Highest-IOU detection for ``box`` (ties keep the earlier detection)."""
    best_idx, best_iou = None, 0.0
    for i, det in enumerate(detections):
        if i in skip:
            continue
        overlap = iou(box, det.box)
        if overlap > best_iou:
            best_idx, best_iou = i, overlap
    return best_idx, best_iou


class ZeroMotionMatcher(Matcher):
    """No motion model: the track stays put and snaps to an overlapping detection.

    Detections are claimed exclusively within a frame (tracks are visited in
    id order), so stale coasting tracks cannot pile onto one detection.
    """

    def __init__(self, claim_iou: float = 0.4):
        self.claim_iou = claim_iou
        self._claimed: set = set()

    def begin_frame(self, frame):
        self._claimed = set()

    def match(self, track, prev, curr, detections):
        idx, best_iou = _best_detection(track.box, detections, self._claimed)
        if idx is not None and best_iou >= self.claim_iou:
            self._claimed.add(idx)
            return detections[idx].box, best_iou
        return track.box, best_iou


class _KalmanBoxFilter:
    """Constant-velocity filter on (cx, cy, area, aspect) with velocity on the
    first three components; aspect ratio is modeled as constant."""

    _F = np.eye(7)
    _F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
    _H = np.eye(4, 7)
    _R = np.diag([1.0, 1.0, 10.0, 10.0])
    _Q = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1.0e-4])

    def __init__(self, box: BBox):
        self.x = np.zeros(7)
        self.x[:4] = self._measure(box)
        self.P = np.diag([10.0, 10.0, 10.0, 10.0, 1.0e4, 1.0e4, 1.0e4])

    @staticmethod
    def _measure(box: BBox) -> np.ndarray:
        return np.array([box.cx, box.cy, box.w * box.h, box.w / box.h])

    def _to_box(self) -> BBox:
        cx, cy, s, a = self.x[:4]
        s = max(s, 1.0e-6)
        a = max(a, 1.0e-6)
        w = float(np.sqrt(s * a))
        h = s / w
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)

    def predict(self) -> BBox:
        if self.x[2] + self.x[6] <= 0:
            self.x[6] = 0.0
        self.x = self._F @ self.x
        self.P = self._F @ self.P @ self._F.T + self._Q
        return self._to_box()

    def update(self, box: BBox) -> None:
        z = self._measure(box)
        y = z - self._H @ self.x
        s_cov = self._H @ self.P @ self._H.T + self._R
        gain = self.P @ self._H.T @ np.linalg.inv(s_cov)
        self.x = self.x + gain @ y
        self.P = (np.eye(7) - gain @ self._H) @ self.P


class KalmanMatcher(Matcher):
    """Constant-velocity prediction, corrected by the best-overlapping detection.

    The filter is updated whenever the best unclaimed detection clears
    ``update_gate``, even if the reported visibility falls below the solver's
    alpha — this is what lets a coasting track re-lock once the object
    reappears. Claims are exclusive within a frame.
    """

    coasts_with_match = True

    def __init__(self, update_gate: float = 0.25):
        self.update_gate = update_gate
        self._claimed: set = set()

    def begin_frame(self, frame):
        self._claimed = set()

    def make_template(self, track, box, frame, detections=()):
        if isinstance(track.template, _KalmanBoxFilter):
            return track.template
        return _KalmanBoxFilter(box)

    def match(self, track, prev, curr, detections):
        if not isinstance(track.template, _KalmanBoxFilter):
            track.template = _KalmanBoxFilter(track.box)
        kf = track.template
        predicted = kf.predict()
        idx, best_iou = _best_detection(predicted, detections, self._claimed)
        if idx is not None and best_iou >= self.update_gate:
            self._claimed.add(idx)
            kf.update(detections[idx].box)
            return kf._to_box(), best_iou
        return predicted, best_iou


def _try_search(box: BBox, frame_shape, expansion: float) -> Optional[SearchRegion]:
    h, w = frame_shape
    try:
        return expand_search_region(box, expansion, float(w), float(h))
    except ValueError:
        return None


@dataclass(frozen=True)
class NccTemplate:
    """Appearance payload of the photometric matcher.

    ``patch`` holds the pixels of ``crop``, a sub-rectangle of the tracked
    box given in box-local coordinates. For a fully visible object the crop
    is the whole box; near the frame border it is the in-frame part, so the
    correlation only ever sees real pixels while the matcher still reports
    the full extent of the object.
    """

    patch: np.ndarray
    box_w: float
    box_h: float
    crop: BBox


class NccMatcher(Matcher):
    """Photometric matcher: normalized cross-correlation of the stored
    template patch over the search region, decoded under a motion penalty.

    On refresh the template is cropped at the best detection overlapping the
    matched box (when one exists). Without that anchor the box size
    random-walks through the discrete scale steps and the center drifts off
    the object over hundreds of refreshes.

    Visibility is discounted by the fraction of the reported box that lies
    inside the image — evidence for the rest does not exist — and drops to
    zero below ``min_frame_support``, which is what happens when the object
    leaves the view. Templates are never stored as clipped crops stretched
    to full size (that locks on misaligned and never recovers): the stored
    crop is the in-frame part at its true size and position, and matching
    reconstructs the full box from it.
    """

    def __init__(
        self,
        penalty: PenaltyParams = PenaltyParams(),
        scales=DEFAULT_SCALES,
        stride: float = DEFAULT_STRIDE,
        search_expansion: float = 2.0,
        anchor_iou: float = 0.5,
        min_frame_support: float = 0.35,
        min_birth_support: float = 0.55,
    ):
        self.penalty = penalty
        self.scales = scales
        self.stride = stride
        self.search_expansion = search_expansion
        self.anchor_iou = anchor_iou
        self.min_frame_support = min_frame_support
        self.min_birth_support = min_birth_support

    def make_template(self, track, box, frame, detections=()):
        if frame.raster is None:
            raise ValueError("ncc matcher needs frame rasters")
        idx, best_iou = _best_detection(box, detections)
        if idx is None or best_iou < self.anchor_iou:
            # No detection vouches for the matched box. Re-cropping it anyway
            # would let a misaligned box re-learn its own framing and lock on
            # off-center for good; the stale template keeps the response peak
            # on the object instead.
            return track.template
        box = detections[idx].box
        h, w = frame.raster.shape
        if fraction_inside(box, float(w), float(h)) < self.min_birth_support:
            # Too little of the object is in frame for the crop to carry an
            # identity; the stale template is the better bet.
            return track.template
        crop = clip_to_frame(box, float(w), float(h))
        if crop is None:
            return track.template
        try:
            patch = crop_pixels(frame.raster, crop).astype(np.float64)
        except ValueError:
            return track.template
        local = BBox(crop.x - box.x, crop.y - box.y, crop.w, crop.h)
        return NccTemplate(patch, box.w, box.h, local)

    def can_start(self, det, frame):
        # A detection mostly outside the frame cannot seed a template (see
        # make_template); a track started from it would be born blind, lose
        # the object immediately, and leave a fresh corpse every frame while
        # the camera drags the object along the edge.
        if frame.raster is None:
            return False
        h, w = frame.raster.shape
        return fraction_inside(det.box, float(w), float(h)) >= self.min_birth_support

    def match(self, track, prev, curr, detections):
        if curr.raster is None:
            raise ValueError("ncc matcher needs frame rasters")
        t = track.template
        if t is None:
            return track.box, 0.0
        h, w = curr.raster.shape
        # Where the stored crop should sit if the full box were centered on
        # the current estimate.
        full_prior = BBox(track.box.cx - t.box_w / 2.0, track.box.cy - t.box_h / 2.0, t.box_w, t.box_h)
        crop_prior = BBox(full_prior.x + t.crop.x, full_prior.y + t.crop.y, t.crop.w, t.crop.h)
        # The search margin covers full-box motion even when the stored crop
        # is only a fragment of the box.
        grow_w = (self.search_expansion - 1.0) * t.box_w
        grow_h = (self.search_expansion - 1.0) * t.box_h
        unclipped = BBox(
            crop_prior.cx - (crop_prior.w + grow_w) / 2.0,
            crop_prior.cy - (crop_prior.h + grow_h) / 2.0,
            crop_prior.w + grow_w,
            crop_prior.h + grow_h,
        )
        region = clip_to_frame(unclipped, float(w), float(h))
        if region is None:
            return track.box, 0.0
        search = SearchRegion(box=region, unclipped=unclipped)
        maps = match_template_patch(t.patch, crop_prior, curr.raster, search, self.scales, self.stride)
        crop_box, visibility = decode_response(maps, crop_prior, self.penalty)
        scale = crop_box.w / t.crop.w
        box = BBox(
            crop_box.x - t.crop.x * scale,
            crop_box.y - t.crop.y * scale,
            t.box_w * scale,
            t.box_h * scale,
        )
        support = fraction_inside(box, float(w), float(h))
        if support < self.min_frame_support:
            return box, 0.0
        return box, visibility * support


class RegressionMatcher(Matcher):
    """Learned matcher: the MLP head predicts visibility and a box-relative
    motion vector from the stored template patch and the current search patch."""

    def __init__(self, head: MlpHead, features: FeatureParams = FeatureParams(), search_expansion: float = 2.0):
        self.head = head
        self.features = features
        self.search_expansion = search_expansion
        self.min_template_support = 0.9

    def make_template(self, track, box, frame, detections=()):
        if frame.raster is None:
            raise ValueError("regression matcher needs frame rasters")
        idx, best_iou = _best_detection(box, detections)
        if idx is None or best_iou < 0.5:
            # Refresh only from a detection-backed box (see NccMatcher).
            return track.template
        box = detections[idx].box
        h, w = frame.raster.shape
        if fraction_inside(box, float(w), float(h)) < self.min_template_support:
            # A clipped crop would be stretched to full size; keep the old one.
            return track.template
        try:
            return _normalized_patch(frame.raster, box, self.features.template_grid)
        except ValueError:
            return track.template

    def can_start(self, det, frame):
        if frame.raster is None:
            return False
        h, w = frame.raster.shape
        return fraction_inside(det.box, float(w), float(h)) >= self.min_template_support

    def match(self, track, prev, curr, detections):
        if curr.raster is None:
            raise ValueError("regression matcher needs frame rasters")
        if track.template is None:
            return track.box, 0.0
        search = _try_search(track.box, curr.raster.shape, self.search_expansion)
        if search is None:
            return track.box, 0.0
        patch = _normalized_patch(curr.raster, search.box, self.features.search_grid)
        features = np.concatenate([track.template.ravel(), patch.ravel()])
        v, motion = self.head.forward(features)
        return decode_motion(track.box, motion), v


class OracleMatcher(Matcher):
    """Ground-truth matcher: builds ideal (optionally jittered) response maps
    for the identity the track was born on, then decodes them like any other
    dense matcher. Isolates solver behavior from matching quality."""

    def __init__(
        self,
        noise: OracleNoise = OracleNoise(),
        penalty: PenaltyParams = PenaltyParams(),
        search_expansion: float = 2.0,
        grid: int = ORACLE_GRID,
    ):
        self.noise = noise
        self.penalty = penalty
        self.search_expansion = search_expansion
        self.grid = grid
        self._rng = np.random.default_rng(noise.seed)

    def make_template(self, track, box, frame, detections=()):
        if frame.gt is None:
            raise ValueError("oracle matcher needs ground truth on every frame")
        if track.template is not None:
            # The identity binds once, at birth; re-binding on refresh would
            # let a track hand itself over to whichever object it currently
            # overlaps most, e.g. halfway through a crossing.
            return track.template
        best_id, best_iou = None, 0.0
        for identity, gt_box in frame.gt.items():
            overlap = iou(box, gt_box)
            if overlap > best_iou:
                best_id, best_iou = identity, overlap
        return best_id if best_iou >= 0.5 else None

    def match(self, track, prev, curr, detections):
        if curr.gt is None:
            raise ValueError("oracle matcher needs ground truth on every frame")
        gt_box = curr.gt.get(track.template) if track.template is not None else None
        if gt_box is None:
            # The identity is hidden; there is nothing to localize.
            return track.box, ABSENT_VISIBILITY
        r = self.search_expansion
        prior = track.box
        region = BBox(
            prior.cx - r * prior.w / 2.0,
            prior.cy - r * prior.h / 2.0,
            r * prior.w,
            r * prior.h,
        )
        if not region.contains(gt_box.cx, gt_box.cy):
            # Perfect re-detection: the oracle re-acquires its identity
            # anywhere in the frame, so a coasting track always re-locks on
            # reappearance and leftover switches measure the solver alone.
            prior = gt_box
            region = BBox(
                gt_box.cx - r * gt_box.w / 2.0,
                gt_box.cy - r * gt_box.h / 2.0,
                r * gt_box.w,
                r * gt_box.h,
            )
        geometry = GridGeometry.cover(region, self.grid, self.grid)
        maps = oracle_match(gt_box, geometry, self.noise, rng=self._rng)
        return decode_response(maps, prior, self.penalty)


class OnlineTracker:
    """Frame-by-frame association solver over a pluggable motion matcher."""

    def __init__(self, matcher: Matcher, params: TrackerParams = TrackerParams()):
        self.matcher = matcher
        self.params = params
        self.tracks: dict[int, Track] = {}
        self._next_id = 1
        self._prev: Optional[FrameInput] = None

    def _emit(self, track: Track, frame_index: int, score: float) -> None:
        track.history[frame_index] = (track.box, score)

    def step(self, frame: FrameInput) -> list:
        """Advance all tracks to ``frame`` and spawn births; returns live tracks."""
        p = self.params
        dets = nms(frame.detections, p.nms_iou)
        self.matcher.begin_frame(frame)

        for tid in sorted(self.tracks):
            track = self.tracks[tid]
            if not track.alive:
                continue
            box, visibility = self.matcher.match(track, self._prev, frame, dets)
            track.visibility = visibility
            # Detection re-confirmation: a matcher may keep reporting high
            # visibility for a box no detection ever lands on again (a patch
            # of texture it latched onto). Such a track loses its claim to be
            # an object after ``support_patience`` unsupported frames and
            # coasts as lost until the normal kill timer runs out.
            _, det_overlap = _best_detection(box, dets)
            track.unsupported = 0 if det_overlap >= p.support_iou else track.unsupported + 1
            if visibility >= p.alpha and track.unsupported < p.support_patience:
                track.box = box
                track.state = TrackState.ACTIVE
                track.lost_frames = 0
                track.template = self.matcher.make_template(track, box, frame, dets)
                self._emit(track, frame.index, visibility)
            else:
                # A lost track holds its last confident position unless the
                # matcher's box is a real extrapolation; adopting an argmax
                # over noise would walk the track away from where the object
                # will reappear.
                if self.matcher.coasts_with_match:
                    track.box = box
                track.state = TrackState.LOST
                track.lost_frames += 1
                if track.lost_frames >= p.tau:
                    track.state = TrackState.KILLED
                elif p.emit_lost:
                    self._emit(track, frame.index, visibility)

        # Two active tracks converging on the same box are one object that
        # briefly had two explanations (a coasting track re-locked after a
        # replacement was already born) — unless the detector sees two
        # objects there, in which case the tracks are crossing, not
        # duplicated. The two-object evidence must come from the raw
        # detections: suppression would have collapsed a coincident pair
        # into one before this point. Keep the older identity when merging.
        active = [t for t in self.tracks.values() if t.state is TrackState.ACTIVE]
        active.sort(key=lambda t: t.track_id)
        for i, younger in enumerate(reversed(active)):
            for older in active[: len(active) - 1 - i]:
                if older.state is not TrackState.ACTIVE or iou(younger.box, older.box) < p.merge_iou:
                    continue
                support = sum(
                    1
                    for det in frame.detections
                    if iou(det.box, younger.box) >= 0.5 or iou(det.box, older.box) >= 0.5
                )
                if support <= 1:
                    younger.state = TrackState.KILLED
                    younger.history.pop(frame.index, None)
                    break

        propagated_boxes = [t.box for t in self.tracks.values() if t.alive]
        fresh = spatial_suppress(dets, propagated_boxes, p.spawn_iou)
        for det in fresh:
            if det.confidence < p.beta or not self.matcher.can_start(det, frame):
                continue
            track = Track(self._next_id, TrackState.ACTIVE, det.box, det.confidence)
            self._next_id += 1
            track.template = self.matcher.make_template(track, det.box, frame, dets)
            self._emit(track, frame.index, det.confidence)
            self.tracks[track.track_id] = track

        self._prev = frame
        return [t for t in self.tracks.values() if t.alive]

    def run(self, frames: Sequence[FrameInput]) -> "OnlineTracker":
        for frame in frames:
            self.step(frame)
        return self

    def results(self) -> list:
        """All emitted rows as (frame, track_id, box, score), frame-major order."""
        rows = []
        for tid in sorted(self.tracks):
            for frame_index, (box, score) in self.tracks[tid].history.items():
                rows.append((frame_index, tid, box, score))
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows


def make_matcher(
    name: str,
    head: Optional[MlpHead] = None,
    penalty: Optional[PenaltyParams] = None,
    noise: Optional[OracleNoise] = None,
    search_expansion: float = 2.0,
) -> Matcher:
    """Build a matcher by CLI name; ``imm`` requires a trained head."""
    penalty = penalty if penalty is not None else PenaltyParams()
    noise = noise if noise is not None else OracleNoise()
    if name == "oracle":
        return OracleMatcher(noise=noise, penalty=penalty, search_expansion=search_expansion)
    if name == "ncc":
        return NccMatcher(penalty=penalty, search_expansion=search_expansion)
    if name == "imm":
        if head is None:
            raise ValueError("the imm matcher needs a trained motion head")
        return RegressionMatcher(head, search_expansion=search_expansion)
    if name == "zero-motion":
        return ZeroMotionMatcher()
    if name == "kalman":
        return KalmanMatcher()
    raise ValueError(f"unknown matcher {name!r}; choices: {', '.join(MATCHER_NAMES)}")
