"""Box primitives: construction, overlap, motion encoding, search regions."""

import math

import numpy as np
import pytest

from motkit.geometry import (
    BBox,
    Detection,
    MotionDelta,
    clip_to_frame,
    decode_motion,
    encode_motion,
    expand_search_region,
    fraction_inside,
    iou,
)


def test_bbox_derived_coordinates():
    b = BBox(2.0, 3.0, 10.0, 4.0)
    assert b.x2 == 12.0
    assert b.y2 == 7.0
    assert b.cx == 7.0
    assert b.cy == 5.0
    assert b.area == 40.0
    assert b.as_tuple() == (2.0, 3.0, 10.0, 4.0)


@pytest.mark.parametrize("bad", [dict(w=0.0), dict(w=-1.0), dict(h=0.0), dict(x=float("nan")), dict(y=float("inf"))])
def test_bbox_rejects_degenerate(bad):
    kwargs = dict(x=0.0, y=0.0, w=5.0, h=5.0)
    kwargs.update(bad)
    with pytest.raises(ValueError):
        BBox(**kwargs)


def test_bbox_contains_is_inclusive():
    b = BBox(0.0, 0.0, 4.0, 4.0)
    assert b.contains(0.0, 0.0)
    assert b.contains(4.0, 4.0)
    assert b.contains(2.0, 2.0)
    assert not b.contains(4.0 + 1e-9, 2.0)


def test_detection_confidence_range():
    Detection(BBox(0, 0, 1, 1), 0.0)
    Detection(BBox(0, 0, 1, 1), 1.0)
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 1.5)
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), -0.1)


def test_iou_hand_cases():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 5, 5)) == 0.0
    # Shares an edge only: zero-area intersection.
    assert iou(a, BBox(10, 0, 10, 10)) == 0.0
    # Half overlap: inter 50, union 150.
    assert iou(a, BBox(5, 0, 10, 10)) == pytest.approx(50.0 / 150.0)
    # Containment: inter is the small area.
    assert iou(a, BBox(2, 2, 5, 5)) == pytest.approx(25.0 / 100.0)


def test_iou_symmetry_and_bounds():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = BBox(*rng.uniform(-5, 5, 2), *rng.uniform(0.5, 10, 2))
        b = BBox(*rng.uniform(-5, 5, 2), *rng.uniform(0.5, 10, 2))
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


def test_fraction_inside():
    frame_w, frame_h = 100.0, 50.0
    assert fraction_inside(BBox(10, 10, 10, 10), frame_w, frame_h) == 1.0
    assert fraction_inside(BBox(-5, 10, 10, 10), frame_w, frame_h) == pytest.approx(0.5)
    assert fraction_inside(BBox(-20, 10, 10, 10), frame_w, frame_h) == 0.0
    # Corner case: quarter visible.
    assert fraction_inside(BBox(-5, -5, 10, 10), frame_w, frame_h) == pytest.approx(0.25)


def test_clip_to_frame():
    assert clip_to_frame(BBox(10, 10, 5, 5), 100, 100) == BBox(10, 10, 5, 5)
    clipped = clip_to_frame(BBox(-3, 2, 10, 10), 100, 100)
    assert clipped == BBox(0.0, 2.0, 7.0, 10.0)
    assert clip_to_frame(BBox(-20, -20, 5, 5), 100, 100) is None
    # Clipping agrees with the area fraction.
    box = BBox(-4.0, 95.0, 12.0, 12.0)
    clipped = clip_to_frame(box, 100, 100)
    assert clipped.area / box.area == pytest.approx(fraction_inside(box, 100, 100))


def test_motion_encode_hand_case():
    prev = BBox(10.0, 20.0, 8.0, 4.0)
    nxt = BBox(14.0, 18.0, 16.0, 2.0)
    m = encode_motion(prev, nxt)
    assert m.dx == pytest.approx(4.0 / 8.0)
    assert m.dy == pytest.approx(-2.0 / 4.0)
    assert m.dw == pytest.approx(math.log(2.0))
    assert m.dh == pytest.approx(math.log(0.5))


def test_motion_roundtrip_random():
    rng = np.random.default_rng(7)
    for _ in range(300):
        prev = BBox(*rng.uniform(-30, 30, 2), *rng.uniform(0.5, 40, 2))
        nxt = BBox(*rng.uniform(-30, 30, 2), *rng.uniform(0.5, 40, 2))
        back = decode_motion(prev, encode_motion(prev, nxt))
        assert back.x == pytest.approx(nxt.x, abs=1e-9)
        assert back.y == pytest.approx(nxt.y, abs=1e-9)
        assert back.w == pytest.approx(nxt.w, rel=1e-12)
        assert back.h == pytest.approx(nxt.h, rel=1e-12)


def test_motion_identity_is_zero():
    b = BBox(3.0, 4.0, 5.0, 6.0)
    assert encode_motion(b, b).as_tuple() == (0.0, 0.0, 0.0, 0.0)
    assert decode_motion(b, MotionDelta(0, 0, 0, 0)) == b


def test_motion_delta_rejects_nonfinite():
    with pytest.raises(ValueError):
        MotionDelta(float("nan"), 0, 0, 0)


def test_expand_search_region_centered():
    b = BBox(40.0, 40.0, 10.0, 20.0)
    s = expand_search_region(b, 2.0, 200.0, 200.0)
    assert s.unclipped.w == pytest.approx(20.0)
    assert s.unclipped.h == pytest.approx(40.0)
    assert s.unclipped.cx == pytest.approx(b.cx)
    assert s.unclipped.cy == pytest.approx(b.cy)
    # Fully inside: clipped equals unclipped.
    assert s.box == s.unclipped


def test_expand_search_region_clips_at_border():
    b = BBox(-2.0, 5.0, 10.0, 10.0)
    s = expand_search_region(b, 2.0, 100.0, 100.0)
    assert s.box.x == 0.0
    assert s.box.x2 == pytest.approx(s.unclipped.x2)
    # The unclipped window keeps the true center for grid anchoring.
    assert s.unclipped.cx == pytest.approx(b.cx)


def test_expand_search_region_errors():
    with pytest.raises(ValueError):
        expand_search_region(BBox(0, 0, 5, 5), 1.0, 100, 100)
    with pytest.raises(ValueError):
        expand_search_region(BBox(500, 500, 5, 5), 2.0, 100, 100)
