"""Association solver and motion matchers: lifecycle, suppression, merging,
and the individual matcher behaviors behind one shared interface."""

import numpy as np
import pytest

from motkit.geometry import BBox, Detection, iou
from motkit.metrics import clear_mot, rows_to_trackset
from motkit.mlp import MlpHead
from motkit.regressor import FeatureParams
from motkit.response import ABSENT_VISIBILITY
from motkit.scenario import DetectorNoiseConfig, ScenarioConfig, generate_scenario, simulate_detections
from motkit.tracker import (
    MATCHER_NAMES,
    FrameInput,
    KalmanMatcher,
    Matcher,
    NccMatcher,
    NccTemplate,
    OnlineTracker,
    OracleMatcher,
    RegressionMatcher,
    Track,
    TrackerParams,
    TrackState,
    ZeroMotionMatcher,
    make_matcher,
    nms,
    spatial_suppress,
)

A = BBox(10.0, 10.0, 12.0, 12.0)
B = BBox(60.0, 40.0, 12.0, 12.0)


class ScriptedMatcher(Matcher):
    """Returns scripted (box, visibility) per (frame index, track id); any
    unscripted pair holds the track's box at ``default_vis``."""

    def __init__(self, script=None, default_vis=1.0, coasts=False, allow_start=True):
        self.script = dict(script or {})
        self.default_vis = default_vis
        self.coasts_with_match = coasts
        self.allow_start = allow_start

    def can_start(self, det, frame):
        return self.allow_start

    def match(self, track, prev, curr, detections):
        return self.script.get((curr.index, track.track_id), (track.box, self.default_vis))


# --- parameters and detection suppression -----------------------------------


def test_tracker_params_validation():
    TrackerParams()  # defaults are legal
    with pytest.raises(ValueError):
        TrackerParams(alpha=-0.1)
    with pytest.raises(ValueError):
        TrackerParams(beta=1.5)
    with pytest.raises(ValueError):
        TrackerParams(tau=0)
    with pytest.raises(ValueError):
        TrackerParams(merge_iou=0.0)
    with pytest.raises(ValueError):
        TrackerParams(support_patience=0)
    with pytest.raises(ValueError):
        TrackerParams(search_expansion=1.0)


def test_nms_keeps_highest_confidence():
    shifted = BBox(12.0, 10.0, 12.0, 12.0)
    kept = nms([Detection(A, 0.7), Detection(shifted, 0.9), Detection(B, 0.5)])
    assert [d.confidence for d in kept] == [0.9, 0.5]
    assert kept[0].box == shifted


def test_nms_keeps_disjoint_boxes():
    dets = [Detection(A, 0.5), Detection(B, 0.9)]
    kept = nms(dets)
    assert len(kept) == 2
    assert kept[0].confidence == 0.9  # ordered by confidence


def test_nms_ties_keep_input_order():
    first = Detection(A, 0.8)
    second = Detection(BBox(11.0, 10.0, 12.0, 12.0), 0.8)
    assert nms([first, second]) == [first]
    assert nms([second, first]) == [second]


def test_nms_threshold_is_inclusive():
    a = BBox(0.0, 0.0, 10.0, 10.0)
    b = BBox(0.0, 5.0, 10.0, 10.0)  # IOU exactly 1/3
    dets = [Detection(a, 0.9), Detection(b, 0.8)]
    assert len(nms(dets, iou_thr=1.0 / 3.0)) == 1
    assert len(nms(dets, iou_thr=0.34)) == 2


def test_nms_validates_threshold():
    with pytest.raises(ValueError):
        nms([], iou_thr=0.0)
    with pytest.raises(ValueError):
        nms([], iou_thr=1.1)


def test_spatial_suppress():
    dets = [Detection(A, 0.9), Detection(B, 0.9)]
    assert spatial_suppress(dets, [A]) == [dets[1]]
    assert spatial_suppress(dets, []) == dets
    assert spatial_suppress(dets, [A, B]) == []


# --- solver lifecycle --------------------------------------------------------


def test_births_respect_confidence_gate():
    tracker = OnlineTracker(ScriptedMatcher(), TrackerParams())
    tracker.step(FrameInput(0, [Detection(A, 0.55), Detection(B, 0.60)]))
    assert len(tracker.tracks) == 1
    assert tracker.tracks[1].box == B


def test_births_respect_matcher_veto():
    tracker = OnlineTracker(ScriptedMatcher(allow_start=False), TrackerParams())
    assert tracker.step(FrameInput(0, [Detection(A, 0.9)])) == []
    assert not tracker.tracks


def test_track_lifecycle_active_lost_killed():
    script = {(t, 1): (A, 0.0) for t in (2, 3, 4)}
    tracker = OnlineTracker(ScriptedMatcher(script), TrackerParams(tau=3))
    tracker.step(FrameInput(0, [Detection(A, 0.9)]))
    track = tracker.tracks[1]
    assert track.state is TrackState.ACTIVE

    tracker.step(FrameInput(1, [Detection(A, 0.9)]))
    assert track.state is TrackState.ACTIVE
    assert len(tracker.tracks) == 1  # the detection cannot re-spawn a new track

    tracker.step(FrameInput(2, []))
    assert track.state is TrackState.LOST
    assert track.lost_frames == 1
    tracker.step(FrameInput(3, []))
    assert track.state is TrackState.LOST
    assert tracker.step(FrameInput(4, [])) == []
    assert track.state is TrackState.KILLED

    # Only confident frames were emitted.
    assert sorted(frame for frame, _, _, _ in tracker.results()) == [0, 1]


def test_emit_lost_includes_coasting_frames():
    script = {(t, 1): (A, 0.0) for t in (1, 2, 3)}
    tracker = OnlineTracker(ScriptedMatcher(script), TrackerParams(tau=3, emit_lost=True))
    tracker.step(FrameInput(0, [Detection(A, 0.9)]))
    for t in (1, 2, 3):
        tracker.step(FrameInput(t, []))
    # Lost frames are emitted until the kill at frame 3.
    assert sorted(frame for frame, _, _, _ in tracker.results()) == [0, 1, 2]


def test_lost_track_box_freezes_without_coasting_matcher():
    moved = BBox(30.0, 30.0, 12.0, 12.0)
    script = {(1, 1): (moved, 0.1)}
    tracker = OnlineTracker(ScriptedMatcher(script, coasts=False), TrackerParams())
    tracker.step(FrameInput(0, [Detection(A, 0.9)]))
    tracker.step(FrameInput(1, []))
    assert tracker.tracks[1].box == A  # the low-visibility argmax was not adopted


def test_lost_track_box_moves_with_coasting_matcher():
    moved = BBox(30.0, 30.0, 12.0, 12.0)
    script = {(1, 1): (moved, 0.1)}
    tracker = OnlineTracker(ScriptedMatcher(script, coasts=True), TrackerParams())
    tracker.step(FrameInput(0, [Detection(A, 0.9)]))
    tracker.step(FrameInput(1, []))
    assert tracker.tracks[1].box == moved  # a predictive matcher keeps extrapolating


def test_unsupported_track_goes_lost_despite_high_visibility():
    tracker = OnlineTracker(
        ScriptedMatcher(default_vis=0.9), TrackerParams(support_patience=2, tau=10)
    )
    tracker.step(FrameInput(0, [Detection(A, 0.9)]))
    track = tracker.tracks[1]
    tracker.step(FrameInput(1, []))
    assert track.state is TrackState.ACTIVE  # one unsupported frame is tolerated
    tracker.step(FrameInput(2, []))
    assert track.state is TrackState.LOST  # patience exhausted, visibility ignored

    # A returning detection re-confirms the same identity, not a new track.
    tracker.step(FrameInput(3, [Detection(A, 0.9)]))
    assert track.state is TrackState.ACTIVE
    assert list(tracker.tracks) == [1]


def test_duplicate_tracks_merge_keeping_older_identity():
    target = BBox(35.0, 25.0, 12.0, 12.0)
    script = {(1, 1): (target, 0.9), (1, 2): (target, 0.9)}
    tracker = OnlineTracker(ScriptedMatcher(script), TrackerParams())
    tracker.step(FrameInput(0, [Detection(A, 0.9), Detection(B, 0.8)]))
    assert len(tracker.tracks) == 2

    # One raw detection cannot support two tracks: the younger one dies.
    tracker.step(FrameInput(1, [Detection(target, 0.9)]))
    assert tracker.tracks[1].state is TrackState.ACTIVE
    assert tracker.tracks[2].state is TrackState.KILLED
    assert 1 not in tracker.tracks[2].history  # its frame-1 emission was retracted
    assert 0 in tracker.tracks[2].history


def test_crossing_tracks_survive_when_two_detections_support_them():
    target = BBox(35.0, 25.0, 12.0, 12.0)
    script = {(1, 1): (target, 0.9), (1, 2): (target, 0.9)}
    tracker = OnlineTracker(ScriptedMatcher(script), TrackerParams())
    tracker.step(FrameInput(0, [Detection(A, 0.9), Detection(B, 0.8)]))

    # Two coincident raw detections read as two objects mid-crossing, even
    # though suppression collapses them before matching.
    tracker.step(FrameInput(1, [Detection(target, 0.9), Detection(target, 0.85)]))
    assert tracker.tracks[1].state is TrackState.ACTIVE
    assert tracker.tracks[2].state is TrackState.ACTIVE


# --- baseline matchers -------------------------------------------------------


def test_zero_motion_snaps_to_overlapping_detection():
    matcher = ZeroMotionMatcher()
    det = Detection(BBox(11.0, 10.0, 12.0, 12.0), 0.9)
    frame = FrameInput(0, [det])
    matcher.begin_frame(frame)
    track = Track(1, TrackState.ACTIVE, A, 1.0)
    box, vis = matcher.match(track, None, frame, frame.detections)
    assert box == det.box
    assert vis == pytest.approx(iou(A, det.box))


def test_zero_motion_claims_are_exclusive_per_frame():
    matcher = ZeroMotionMatcher()
    det = Detection(A, 0.9)
    frame = FrameInput(0, [det])
    track_1 = Track(1, TrackState.ACTIVE, A, 1.0)
    track_2 = Track(2, TrackState.ACTIVE, BBox(12.0, 10.0, 12.0, 12.0), 1.0)

    matcher.begin_frame(frame)
    box_1, _ = matcher.match(track_1, None, frame, frame.detections)
    box_2, vis_2 = matcher.match(track_2, None, frame, frame.detections)
    assert box_1 == A
    assert box_2 == track_2.box and vis_2 == 0.0  # already claimed

    matcher.begin_frame(FrameInput(1, [det]))  # claims reset between frames
    box_2, vis_2 = matcher.match(track_2, None, frame, frame.detections)
    assert box_2 == A and vis_2 > 0.0


def test_zero_motion_stays_put_without_detections():
    matcher = ZeroMotionMatcher()
    frame = FrameInput(0, [Detection(B, 0.9)])
    matcher.begin_frame(frame)
    track = Track(1, TrackState.ACTIVE, A, 1.0)
    box, vis = matcher.match(track, None, frame, frame.detections)
    assert box == A and vis == 0.0


def test_kalman_learns_constant_velocity_and_coasts():
    assert KalmanMatcher.coasts_with_match is True
    matcher = KalmanMatcher()
    track = Track(1, TrackState.ACTIVE, BBox(10.0, 20.0, 10.0, 10.0), 1.0)
    for t in range(1, 12):
        det = Detection(BBox(10.0 + 5.0 * t, 20.0, 10.0, 10.0), 0.9)
        frame = FrameInput(t, [det])
        matcher.begin_frame(frame)
        box, vis = matcher.match(track, None, frame, frame.detections)
        track.box = box
    assert vis > 0.5  # locked on by now

    centers = []
    for t in range(12, 16):
        frame = FrameInput(t, [])
        matcher.begin_frame(frame)
        box, vis = matcher.match(track, None, frame, frame.detections)
        track.box = box
        centers.append(box.cx)
    steps = np.diff([centers[0] - 5.0] + centers)  # include the first coast step
    assert np.all(steps > 3.5) and np.all(steps < 6.5)


def test_kalman_claims_are_exclusive():
    matcher = KalmanMatcher()
    det = Detection(A, 0.9)
    frame = FrameInput(0, [det])
    matcher.begin_frame(frame)
    track_1 = Track(1, TrackState.ACTIVE, A, 1.0)
    track_2 = Track(2, TrackState.ACTIVE, A, 1.0)
    matcher.match(track_1, None, frame, frame.detections)
    _, vis_2 = matcher.match(track_2, None, frame, frame.detections)
    assert vis_2 == 0.0


# --- photometric matcher -----------------------------------------------------


def _texture(seed, h, w):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(h, w))


def test_ncc_template_is_cropped_at_the_anchoring_detection():
    frame_raster = np.full((60, 80), 0.5)
    texture = _texture(1, 12, 16)
    frame_raster[20:32, 30:46] = texture
    det_box = BBox(30.0, 20.0, 16.0, 12.0)
    frame = FrameInput(0, [Detection(det_box, 0.9)], raster=frame_raster)
    matcher = NccMatcher()
    track = Track(1, TrackState.ACTIVE, det_box, 1.0)

    # The matched box is slightly off; the template still crops the detection.
    offset_box = BBox(31.0, 20.5, 16.0, 12.0)
    template = matcher.make_template(track, offset_box, frame, frame.detections)
    assert isinstance(template, NccTemplate)
    assert np.array_equal(template.patch, texture)
    assert (template.box_w, template.box_h) == (16.0, 12.0)
    assert (template.crop.x, template.crop.y) == (0.0, 0.0)


def test_ncc_template_refresh_requires_a_detection():
    frame_raster = np.full((60, 80), 0.5)
    frame = FrameInput(0, [], raster=frame_raster)
    matcher = NccMatcher()
    sentinel = object()
    track = Track(1, TrackState.ACTIVE, A, 1.0, template=sentinel)
    assert matcher.make_template(track, A, frame, ()) is sentinel


def test_ncc_birth_veto_near_the_frame_border():
    frame_raster = np.full((60, 80), 0.5)
    frame = FrameInput(0, [], raster=frame_raster)
    matcher = NccMatcher()
    assert matcher.can_start(Detection(BBox(30.0, 20.0, 16.0, 12.0), 0.9), frame)
    half_out = Detection(BBox(-8.0, 20.0, 16.0, 12.0), 0.9)  # 50% visible < 55% floor
    assert not matcher.can_start(half_out, frame)
    assert not matcher.can_start(Detection(A, 0.9), FrameInput(0, [], raster=None))


def test_ncc_fragment_template_reconstructs_the_full_box():
    texture = _texture(0, 12, 16)
    frame_1 = np.full((60, 80), 0.5)
    frame_1[20:32, 0:10] = texture[:, 6:]  # object straddles the left edge
    box_1 = BBox(-6.0, 20.0, 16.0, 12.0)
    matcher = NccMatcher()
    track = Track(1, TrackState.ACTIVE, box_1, 1.0)
    f1 = FrameInput(0, [Detection(box_1, 0.9)], raster=frame_1)
    template = matcher.make_template(track, box_1, f1, f1.detections)
    assert isinstance(template, NccTemplate)
    assert (template.box_w, template.box_h) == (16.0, 12.0)
    assert (template.crop.x, template.crop.y, template.crop.w, template.crop.h) == (6.0, 0.0, 10.0, 12.0)
    assert np.array_equal(template.patch, frame_1[20:32, 0:10])

    # Next frame the object has fully entered the frame (one pixel lower, so
    # its crop center lands on the stride-2 candidate lattice); matching the
    # stored fragment must report the full 16-wide box, not just the part
    # that was visible when the template was taken.
    frame_2 = np.full((60, 80), 0.5)
    frame_2[21:33, 0:16] = texture
    track.template = template
    box, vis = matcher.match(track, None, FrameInput(1, [], raster=frame_2), [])
    assert vis > 0.8
    assert iou(box, BBox(0.0, 21.0, 16.0, 12.0)) > 0.95


def test_ncc_match_without_template_reports_invisible():
    frame = FrameInput(0, [], raster=np.full((60, 80), 0.5))
    matcher = NccMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0, template=None)
    box, vis = matcher.match(track, None, frame, [])
    assert box == A and vis == 0.0


def test_ncc_requires_rasters():
    matcher = NccMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0)
    with pytest.raises(ValueError, match="raster"):
        matcher.match(track, None, FrameInput(0, []), [])
    with pytest.raises(ValueError, match="raster"):
        matcher.make_template(track, A, FrameInput(0, []), ())


# --- oracle matcher ----------------------------------------------------------


def test_oracle_binds_identity_once():
    frame = FrameInput(0, [], gt={7: A, 8: B})
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0)
    assert matcher.make_template(track, A, frame) == 7
    track.template = 7
    # Refreshing while overlapping a different object must not re-bind.
    assert matcher.make_template(track, B, frame) == 7


def test_oracle_requires_majority_overlap_to_bind():
    frame = FrameInput(0, [], gt={7: A})
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, B, 1.0)
    assert matcher.make_template(track, B, frame) is None


def test_oracle_reports_absent_when_identity_is_hidden():
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0, template=7)
    box, vis = matcher.match(track, None, FrameInput(3, [], gt={8: B}), [])
    assert box == A
    assert vis == ABSENT_VISIBILITY
    assert vis < 0.4  # below any reasonable alpha: the track must coast


def test_oracle_localizes_exactly_inside_the_search_region():
    shifted = BBox(12.0, 11.5, 12.0, 12.0)
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0, template=7)
    box, vis = matcher.match(track, None, FrameInput(1, [], gt={7: shifted}), [])
    assert vis == pytest.approx(1.0)
    assert iou(box, shifted) > 0.999


def test_oracle_reacquires_outside_the_search_region():
    far = BBox(100.0, 90.0, 12.0, 12.0)
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0, template=7)
    box, vis = matcher.match(track, None, FrameInput(1, [], gt={7: far}), [])
    assert vis == pytest.approx(1.0)
    assert iou(box, far) > 0.999


def test_oracle_requires_ground_truth():
    matcher = OracleMatcher()
    track = Track(1, TrackState.ACTIVE, A, 1.0)
    with pytest.raises(ValueError, match="ground truth"):
        matcher.match(track, None, FrameInput(0, []), [])
    with pytest.raises(ValueError, match="ground truth"):
        matcher.make_template(track, A, FrameInput(0, []))


# --- factory and end-to-end smoke -------------------------------------------


def test_make_matcher_builds_each_name():
    assert isinstance(make_matcher("oracle"), OracleMatcher)
    assert isinstance(make_matcher("ncc"), NccMatcher)
    assert isinstance(make_matcher("zero-motion"), ZeroMotionMatcher)
    assert isinstance(make_matcher("kalman"), KalmanMatcher)
    head = MlpHead.zeros(FeatureParams().input_dim, hidden_dim=4)
    assert isinstance(make_matcher("imm", head=head), RegressionMatcher)


def test_make_matcher_rejects_bad_requests():
    with pytest.raises(ValueError, match="trained motion head"):
        make_matcher("imm")
    with pytest.raises(ValueError, match="unknown matcher"):
        make_matcher("sift")
    for name in MATCHER_NAMES:
        assert name in ("oracle", "ncc", "imm", "zero-motion", "kalman")


def test_oracle_tracking_recovers_a_clean_scenario():
    config = ScenarioConfig(preset="mixed", seed=0, n_frames=20)
    scenario = generate_scenario(config)
    clean = DetectorNoiseConfig(miss_prob=0.0, jitter_frac=0.0, conf_sigma=0.0, clutter_rate=0.0)
    dets = simulate_detections(scenario, clean)
    frames = [FrameInput(t, dets[t], gt=scenario.gt_at(t)) for t in range(config.n_frames)]
    tracker = OnlineTracker(make_matcher("oracle"), TrackerParams())
    tracker.run(frames)
    pred, _ = rows_to_trackset(
        [(frame, tid, box, score) for frame, tid, box, score in tracker.results()]
    )
    gt = {
        identity: {
            t: scenario.tracks[identity][t]
            for t in range(config.n_frames)
            if scenario.is_visible(t, identity)
        }
        for identity in scenario.identities
    }
    report = clear_mot(gt, pred)
    assert report.mota >= 0.95
    assert report.idsw == 0
