"""Synthetic scenarios: determinism, visibility bookkeeping, rendering,
detector noise, and motion statistics."""

import numpy as np
import pytest

from motkit.geometry import fraction_inside, iou
from motkit.scenario import (
    BACKGROUND_LEVEL,
    MIN_VISIBLE_FRACTION,
    PRESET_NAMES,
    PRESETS,
    DetectorNoiseConfig,
    ScenarioConfig,
    detection_rows,
    generate_scenario,
    gt_rows,
    motion_histogram,
    render_frames,
    simulate_detections,
    write_pgm,
)

SHORT = dict(n_frames=30, frame_w=128, frame_h=96)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(preset="nope")
    with pytest.raises(ValueError):
        ScenarioConfig(n_frames=1)
    with pytest.raises(ValueError):
        ScenarioConfig(fps=0)
    with pytest.raises(ValueError):
        ScenarioConfig(frame_w=16)


def test_object_count_override():
    assert ScenarioConfig(preset="mixed").object_count == PRESETS["mixed"].n_objects
    assert ScenarioConfig(preset="mixed", n_objects=3).object_count == 3


@pytest.mark.parametrize("preset", PRESET_NAMES)
def test_generation_is_deterministic(preset):
    config = ScenarioConfig(preset=preset, seed=5, **SHORT)
    a = generate_scenario(config)
    b = generate_scenario(config)
    assert a.identities == b.identities
    assert a.occluded == b.occluded
    assert a.out_of_view == b.out_of_view
    for i in a.identities:
        assert a.tracks[i] == b.tracks[i]
    different = generate_scenario(ScenarioConfig(preset=preset, seed=6, **SHORT))
    assert any(a.tracks[i] != different.tracks[i] for i in a.identities)


@pytest.mark.parametrize("preset", PRESET_NAMES)
@pytest.mark.parametrize("seed", range(5))
def test_objects_never_spawn_overlapping(preset, seed):
    # Full-size frames: the separation guarantee assumes the presets' own
    # frame area, where re-rolled placements always find open ground.
    scenario = generate_scenario(ScenarioConfig(preset=preset, seed=seed, n_frames=10))
    ids = scenario.identities
    for a_idx in range(len(ids)):
        for b_idx in range(a_idx + 1, len(ids)):
            box_a = scenario.tracks[ids[a_idx]][0]
            box_b = scenario.tracks[ids[b_idx]][0]
            assert iou(box_a, box_b) == 0.0


def test_tracks_cover_every_frame():
    config = ScenarioConfig(preset="fast-camera", seed=1, **SHORT)
    scenario = generate_scenario(config)
    assert len(scenario.identities) == config.object_count
    for i in scenario.identities:
        assert sorted(scenario.tracks[i]) == list(range(config.n_frames))


def test_out_of_view_matches_area_fraction():
    config = ScenarioConfig(preset="fast-camera", seed=2, **SHORT)
    scenario = generate_scenario(config)
    # The fast camera must actually push objects out of view at some point.
    assert scenario.out_of_view
    for t in range(config.n_frames):
        for i in scenario.identities:
            frac = fraction_inside(scenario.tracks[i][t], config.frame_w, config.frame_h)
            assert ((t, i) in scenario.out_of_view) == (frac < MIN_VISIBLE_FRACTION)


def test_gt_hides_invisible_objects():
    config = ScenarioConfig(preset="slow-crowded", seed=0, n_frames=80)
    scenario = generate_scenario(config)
    assert scenario.occluded  # slow-crowded schedules occlusions
    t, i = min(scenario.occluded)
    assert not scenario.is_visible(t, i)
    assert i not in scenario.gt_at(t)
    assert i in scenario.gt_at(t, visible_only=False)
    by_frame = scenario.gt_by_frame()
    assert by_frame[t] == scenario.gt_at(t)


def test_occlusions_can_be_disabled():
    config = ScenarioConfig(preset="slow-crowded", seed=0, n_frames=80, occlusions=False)
    assert not generate_scenario(config).occluded


def test_render_shape_and_range():
    config = ScenarioConfig(preset="mixed", seed=3, **SHORT)
    frames = render_frames(generate_scenario(config))
    assert frames.shape == (30, 96, 128)
    assert frames.min() >= 0.0 and frames.max() <= 1.0


def test_render_paints_exactly_the_visible_set():
    config = ScenarioConfig(preset="slow-crowded", seed=0, n_frames=80)
    scenario = generate_scenario(config)
    frames = render_frames(scenario, sensor_sigma=0.0)
    t, i = min(scenario.occluded)

    def patch_deviation(frame, box):
        y0, x0 = int(round(box.y)), int(round(box.x))
        y1, x1 = int(round(box.y2)), int(round(box.x2))
        y0, x0 = max(y0, 0), max(x0, 0)
        patch = frame[y0:y1, x0:x1]
        return np.abs(patch - BACKGROUND_LEVEL).mean()

    box = scenario.tracks[i][t]
    # Hidden: the occluder slab leaves pure background there.
    assert patch_deviation(frames[t], box) == pytest.approx(0.0, abs=1e-12)
    # Find a frame where the same object is visible; it must leave texture.
    visible_t = next(s for s in range(config.n_frames) if scenario.is_visible(s, i))
    assert patch_deviation(frames[visible_t], scenario.tracks[i][visible_t]) > 0.02


def test_render_is_deterministic():
    config = ScenarioConfig(preset="mixed", seed=9, **SHORT)
    scenario = generate_scenario(config)
    assert np.array_equal(render_frames(scenario), render_frames(scenario))


def test_detections_deterministic_and_clean_when_noiseless():
    config = ScenarioConfig(preset="mixed", seed=4, **SHORT)
    scenario = generate_scenario(config)
    clean = DetectorNoiseConfig(miss_prob=0.0, jitter_frac=0.0, conf_sigma=0.0, clutter_rate=0.0)
    dets = simulate_detections(scenario, clean)
    for t in range(config.n_frames):
        gt = scenario.gt_at(t)
        assert len(dets[t]) == len(gt)
        matched = 0
        for det in dets[t]:
            assert any(iou(det.box, box) > 0.99 for box in gt.values())
            matched += 1
        assert matched == len(gt)


def test_detections_respect_visibility():
    config = ScenarioConfig(preset="slow-crowded", seed=0, n_frames=80)
    scenario = generate_scenario(config)
    clean = DetectorNoiseConfig(miss_prob=0.0, jitter_frac=0.0, conf_sigma=0.0, clutter_rate=0.0)
    dets = simulate_detections(scenario, clean)
    t, i = min(scenario.occluded)
    hidden_box = scenario.tracks[i][t]
    assert all(iou(det.box, hidden_box) < 0.99 for det in dets[t])


def test_clutter_avoids_real_objects():
    config = ScenarioConfig(preset="mixed", seed=4, **SHORT)
    scenario = generate_scenario(config)
    noisy = DetectorNoiseConfig(miss_prob=0.0, jitter_frac=0.0, conf_sigma=0.0, clutter_rate=2.0)
    dets = simulate_detections(scenario, noisy)
    n_clutter = 0
    for t in range(config.n_frames):
        all_gt = list(scenario.gt_at(t, visible_only=False).values())
        for det in dets[t]:
            if any(iou(det.box, box) > 0.99 for box in all_gt):
                continue  # a real (unjittered) detection
            n_clutter += 1
            assert all(iou(det.box, box) == 0.0 for box in all_gt)
    assert n_clutter > 0


def test_detection_confidences_are_bounded():
    config = ScenarioConfig(preset="mixed", seed=4, **SHORT)
    scenario = generate_scenario(config)
    dets = simulate_detections(scenario, DetectorNoiseConfig(seed=2))
    for frame_dets in dets.values():
        for det in frame_dets:
            assert 0.0 <= det.confidence <= 1.0


def test_detector_seed_changes_draws():
    config = ScenarioConfig(preset="mixed", seed=4, **SHORT)
    scenario = generate_scenario(config)
    a = simulate_detections(scenario, DetectorNoiseConfig(seed=0))
    b = simulate_detections(scenario, DetectorNoiseConfig(seed=1))
    assert any(a[t] != b[t] for t in range(config.n_frames))
    again = simulate_detections(scenario, DetectorNoiseConfig(seed=0))
    assert all(a[t] == again[t] for t in range(config.n_frames))


def test_motion_histogram_accounting():
    config = ScenarioConfig(preset="fast-camera", seed=0, n_frames=40)
    scenario = generate_scenario(config)
    stats = motion_histogram(scenario)
    n_expected = len(scenario.identities) * (config.n_frames - config.fps)
    assert stats.offsets.shape == (n_expected,)
    assert stats.hist.sum() == n_expected  # clamping keeps every sample
    assert stats.mean == pytest.approx(stats.offsets.mean())
    assert stats.mean > 0.0


def test_motion_histogram_needs_enough_frames():
    config = ScenarioConfig(preset="mixed", seed=0, n_frames=5, fps=10)
    with pytest.raises(ValueError):
        motion_histogram(generate_scenario(config))


def test_write_pgm_format(tmp_path):
    frame = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    path = tmp_path / "frame.pgm"
    write_pgm(path, frame)
    data = path.read_bytes()
    assert data.startswith(b"P5\n4 3\n255\n")
    assert len(data) == len(b"P5\n4 3\n255\n") + 12


def test_row_exports():
    config = ScenarioConfig(preset="mixed", seed=4, **SHORT)
    scenario = generate_scenario(config)
    g = gt_rows(scenario)
    assert all(conf == 1.0 for _, _, _, conf in g)
    total_visible = sum(len(scenario.gt_at(t)) for t in range(config.n_frames))
    assert len(g) == total_visible
    dets = simulate_detections(scenario, DetectorNoiseConfig())
    d = detection_rows(dets)
    assert len(d) == sum(len(v) for v in dets.values())
    # Detection ids restart from 1 on every frame.
    first_frame_ids = [tid for frame, tid, _, _ in d if frame == 0]
    assert first_frame_ids == list(range(1, len(first_frame_ids) + 1))
