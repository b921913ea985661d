"""Synthetic tracking scenarios: motion, occlusion, rendering, detections.

A scenario is a set of textured rectangles bouncing inside a world box under
a preset motion regime, viewed through a camera window that pans across the
world. Presets with a moving camera use a world larger than the frame, so
objects stream in and out of view instead of piling up against the frame
edges. Scripted occlusion intervals hide an object (no ground-truth
visibility, no detections, and an occluder slab drawn over it in the
rendering). Everything is driven by named random streams derived from one
seed, so a config reproduces byte-identical trajectories, rasters, and
detections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .geometry import BBox, Detection, fraction_inside, iou

PRESET_NAMES = ("slow-crowded", "fast-camera", "mixed")


@dataclass(frozen=True)
class MotionPreset:
    """Per-regime knobs; speeds are px/frame, angles radians, sizes px."""

    object_speed: float
    speed_jitter: float
    turn_prob: float
    camera_speed: float
    camera_turn_every: int
    camera_turn: float
    n_objects: int
    size_range: tuple[float, float]
    occlusion_rate: float
    occlusion_len: tuple[int, int]


PRESETS: dict[str, MotionPreset] = {
    "slow-crowded": MotionPreset(
        object_speed=0.35,
        speed_jitter=0.03,
        turn_prob=0.03,
        camera_speed=0.0,
        camera_turn_every=1,
        camera_turn=0.0,
        n_objects=10,
        size_range=(20.0, 32.0),
        occlusion_rate=0.02,
        occlusion_len=(4, 10),
    ),
    "fast-camera": MotionPreset(
        object_speed=1.5,
        speed_jitter=0.15,
        turn_prob=0.03,
        camera_speed=7.5,
        camera_turn_every=12,
        camera_turn=0.9,
        n_objects=8,
        size_range=(16.0, 26.0),
        occlusion_rate=0.004,
        occlusion_len=(3, 6),
    ),
    "mixed": MotionPreset(
        object_speed=1.0,
        speed_jitter=0.15,
        turn_prob=0.03,
        camera_speed=3.0,
        camera_turn_every=16,
        camera_turn=1.0,
        n_objects=8,
        size_range=(16.0, 28.0),
        occlusion_rate=0.01,
        occlusion_len=(3, 8),
    ),
}


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "mixed"
    n_frames: int = 100
    frame_w: int = 192
    frame_h: int = 144
    fps: int = 10
    seed: int = 0
    n_objects: Optional[int] = None
    occlusions: bool = True

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choices: {', '.join(PRESET_NAMES)}")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if self.fps < 1:
            raise ValueError("fps must be positive")
        if self.frame_w < 32 or self.frame_h < 32:
            raise ValueError("frame must be at least 32x32")

    @property
    def motion(self) -> MotionPreset:
        return PRESETS[self.preset]

    @property
    def object_count(self) -> int:
        return self.n_objects if self.n_objects is not None else self.motion.n_objects


def _stream(seed, key: tuple) -> np.random.Generator:
    """Named deterministic random stream: same (seed, key) -> same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# Half-width of the world beyond the frame on each side when the camera
# moves; the camera window pans inside this slack.
VIEW_MARGIN = 48

# An object must have at least this fraction of its area inside the frame to
# count as visible (and hence as ground truth / a detection source).
MIN_VISIBLE_FRACTION = 0.35


@dataclass
class Scenario:
    config: ScenarioConfig
    # identity -> frame -> box in frame coordinates; spans all frames even
    # while the object is out of view
    tracks: dict
    # (frame, identity) pairs during which the object is hidden by an occluder
    occluded: frozenset
    # (frame, identity) pairs during which the object is mostly outside the view
    out_of_view: frozenset
    # frame -> occluder slabs to draw over the scene
    occluder_boxes: dict

    @property
    def n_frames(self) -> int:
        return self.config.n_frames

    @property
    def identities(self) -> list:
        return sorted(self.tracks)

    def is_visible(self, frame: int, identity: int) -> bool:
        key = (frame, identity)
        return key not in self.occluded and key not in self.out_of_view

    def gt_at(self, frame: int, visible_only: bool = True) -> dict:
        out = {}
        for identity in self.identities:
            if visible_only and not self.is_visible(frame, identity):
                continue
            out[identity] = self.tracks[identity][frame]
        return out

    def gt_by_frame(self, visible_only: bool = True) -> dict:
        return {t: self.gt_at(t, visible_only) for t in range(self.n_frames)}


def _view_margin(config: ScenarioConfig) -> int:
    return VIEW_MARGIN if config.motion.camera_speed > 0 else 0


def _camera_path(config: ScenarioConfig) -> np.ndarray:
    """(T, 2) camera window offset into the world, reflecting at world edges."""
    margin = _view_margin(config)
    path = np.zeros((config.n_frames, 2))
    if margin == 0:
        return path
    preset = config.motion
    rng = _stream(config.seed, (0,))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pos = np.array([float(margin), float(margin)])
    span = 2.0 * margin
    for t in range(config.n_frames):
        path[t] = pos
        if t % preset.camera_turn_every == 0 and t > 0:
            heading += rng.uniform(-preset.camera_turn, preset.camera_turn)
        step = preset.camera_speed * np.array([math.cos(heading), math.sin(heading)])
        pos = pos + step
        # Reflect the pan at the edge of the world slack.
        for axis in range(2):
            if pos[axis] < 0.0:
                pos[axis] = -pos[axis]
                heading = (math.pi - heading) if axis == 0 else -heading
            elif pos[axis] > span:
                pos[axis] = 2.0 * span - pos[axis]
                heading = (math.pi - heading) if axis == 0 else -heading
    return path


def _object_track(config: ScenarioConfig, identity: int, salt: int = 0) -> dict:
    """World-coordinate boxes for one object bouncing inside the world.

    ``salt`` re-rolls the trajectory without disturbing any other stream;
    it is bumped when an initial placement collides with an earlier object.
    """
    preset = config.motion
    margin = _view_margin(config)
    world_w = config.frame_w + 2 * margin
    world_h = config.frame_h + 2 * margin
    rng = _stream(config.seed, (identity,) if salt == 0 else (identity, 5, salt))
    w = rng.uniform(*preset.size_range)
    h = w * rng.uniform(0.8, 1.25)
    lo_x, hi_x = w / 2.0 + 1.0, world_w - w / 2.0 - 1.0
    lo_y, hi_y = h / 2.0 + 1.0, world_h - h / 2.0 - 1.0
    cx = rng.uniform(lo_x, hi_x)
    cy = rng.uniform(lo_y, hi_y)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    speed = max(0.2, rng.normal(preset.object_speed, preset.object_speed / 3.0))
    track = {}
    for t in range(config.n_frames):
        track[t] = BBox(cx - w / 2.0, cy - h / 2.0, w, h)
        if rng.random() < preset.turn_prob:
            heading = rng.uniform(0.0, 2.0 * math.pi)
        speed = float(np.clip(speed + rng.normal(0.0, preset.speed_jitter), 0.5 * preset.object_speed, 1.6 * preset.object_speed))
        cx += speed * math.cos(heading)
        cy += speed * math.sin(heading)
        # Reflect at the world margins so objects stay inside the world.
        if cx < lo_x:
            cx = 2.0 * lo_x - cx
            heading = math.pi - heading
        elif cx > hi_x:
            cx = 2.0 * hi_x - cx
            heading = math.pi - heading
        if cy < lo_y:
            cy = 2.0 * lo_y - cy
            heading = -heading
        elif cy > hi_y:
            cy = 2.0 * hi_y - cy
            heading = -heading
        cx = float(np.clip(cx, lo_x, hi_x))
        cy = float(np.clip(cy, lo_y, hi_y))
    return track


def _occlusion_events(config: ScenarioConfig, identity: int) -> list:
    """Scripted [start, end) hide intervals for one identity."""
    preset = config.motion
    if not config.occlusions or preset.occlusion_rate <= 0:
        return []
    rng = _stream(config.seed, (identity, 2))
    events = []
    t = 5
    lo, hi = preset.occlusion_len
    while t < config.n_frames - hi - 2:
        if rng.random() < preset.occlusion_rate:
            length = int(rng.integers(lo, hi + 1))
            events.append((t, t + length))
            t += length + 5
        else:
            t += 1
    return events


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Build ground-truth trajectories and occlusion schedule for a config."""
    camera = _camera_path(config)
    tracks = {}
    occluded = set()
    out_of_view = set()
    occluder_boxes: dict[int, list] = {}
    starts: list[BBox] = []
    for identity in range(1, config.object_count + 1):
        # Objects never spawn on top of each other: a pair born overlapping
        # reads as a single object to any detector with suppression, so the
        # annotation would demand something no tracker can produce.
        for salt in range(20):
            world = _object_track(config, identity, salt)
            if all(iou(world[0], other) == 0.0 for other in starts):
                break
        starts.append(world[0])
        track = {}
        for t in range(config.n_frames):
            box = world[t]
            track[t] = BBox(box.x - camera[t, 0], box.y - camera[t, 1], box.w, box.h)
            if fraction_inside(track[t], config.frame_w, config.frame_h) < MIN_VISIBLE_FRACTION:
                out_of_view.add((t, identity))
        tracks[identity] = track
        for start, end in _occlusion_events(config, identity):
            for t in range(start, end):
                occluded.add((t, identity))
                box = track[t]
                pad_w, pad_h = 0.25 * box.w, 0.25 * box.h
                slab = BBox(box.x - pad_w, box.y - pad_h, box.w + 2 * pad_w, box.h + 2 * pad_h)
                occluder_boxes.setdefault(t, []).append(slab)
    return Scenario(config, tracks, frozenset(occluded), frozenset(out_of_view), occluder_boxes)


@dataclass(frozen=True)
class DetectorNoiseConfig:
    miss_prob: float = 0.05
    jitter_frac: float = 0.04
    conf_sigma: float = 0.05
    clutter_rate: float = 0.5
    clutter_conf: tuple[float, float] = (0.3, 0.9)
    seed: int = 0


def simulate_detections(scenario: Scenario, noise: DetectorNoiseConfig = DetectorNoiseConfig()) -> dict:
    """Per-frame detections: jittered visible boxes plus uniform clutter.

    Confidence of a real detection tracks its overlap with the ground truth;
    clutter confidence is uniform in ``clutter_conf``. Hidden objects yield
    no detections.
    """
    config = scenario.config
    rng = _stream((config.seed, noise.seed), (3,))
    out: dict[int, list] = {}
    for t in range(scenario.n_frames):
        dets = []
        gt = scenario.gt_at(t)
        # Contact test for clutter includes hidden objects: a partially
        # out-of-view object is still painted, and grazing its edge would
        # hand a photometric matcher a live piece of texture.
        all_boxes = list(scenario.gt_at(t, visible_only=False).values())
        for identity, box in sorted(gt.items()):
            if rng.random() < noise.miss_prob:
                continue
            dx, dy = rng.normal(0.0, noise.jitter_frac, size=2) * (box.w, box.h)
            sw, sh = np.exp(rng.normal(0.0, noise.jitter_frac, size=2))
            w, h = box.w * sw, box.h * sh
            jittered = BBox(box.cx + dx - w / 2.0, box.cy + dy - h / 2.0, w, h)
            conf = float(np.clip(iou(jittered, box) + rng.normal(0.0, noise.conf_sigma), 0.05, 1.0))
            dets.append(Detection(jittered, conf))
        for _ in range(rng.poisson(noise.clutter_rate)):
            # Clutter lands clear of real objects: a false alarm touching an
            # object would have been merged with it by the detector's own NMS,
            # so surviving clutter sits in empty regions.
            for _attempt in range(8):
                w = rng.uniform(config.frame_w / 16.0, config.frame_w / 6.0)
                h = rng.uniform(config.frame_h / 16.0, config.frame_h / 6.0)
                x = rng.uniform(0.0, config.frame_w - w)
                y = rng.uniform(0.0, config.frame_h - h)
                candidate = BBox(x - 2.0, y - 2.0, w + 4.0, h + 4.0)
                if all(iou(candidate, box) == 0.0 for box in all_boxes):
                    dets.append(Detection(BBox(x, y, w, h), float(rng.uniform(*noise.clutter_conf))))
                    break
        out[t] = dets
    return out


def _object_texture(config: ScenarioConfig, identity: int) -> np.ndarray:
    """Fixed 16x16 smooth texture per identity, contrasting with the mid-gray scene.

    The pattern is a bilinear upsampling of a coarse random grid. Smoothness
    matters: objects are painted into integer-rounded boxes, so sub-pixel
    motion shifts the resampling grid from frame to frame. A smooth pattern
    keeps its appearance under that jitter, whereas per-pixel noise would
    decorrelate the object from its own previous frame.
    """
    rng = _stream(config.seed, (identity, 1))
    base = rng.uniform(0.08, 0.22) if identity % 2 else rng.uniform(0.72, 0.88)
    coarse = rng.random((5, 5))
    xs = np.linspace(0.0, coarse.shape[0] - 1.0, 16)
    rows = np.array([np.interp(xs, np.arange(coarse.shape[1]), row) for row in coarse])
    smooth = np.array([np.interp(xs, np.arange(coarse.shape[0]), col) for col in rows.T]).T
    return np.clip(base + 0.3 * (smooth - 0.5), 0.0, 1.0)


def _paint(frame: np.ndarray, box: BBox, pixels) -> None:
    h, w = frame.shape
    x0 = max(0, int(round(box.x)))
    y0 = max(0, int(round(box.y)))
    x1 = min(w, max(x0 + 1, int(round(box.x2))))
    y1 = min(h, max(y0 + 1, int(round(box.y2))))
    if x1 <= x0 or y1 <= y0:
        return
    if np.isscalar(pixels):
        frame[y0:y1, x0:x1] = pixels
    else:
        rows = np.minimum((np.arange(y1 - y0) + 0.5) * pixels.shape[0] / (y1 - y0), pixels.shape[0] - 1).astype(int)
        cols = np.minimum((np.arange(x1 - x0) + 0.5) * pixels.shape[1] / (x1 - x0), pixels.shape[1] - 1).astype(int)
        frame[y0:y1, x0:x1] = pixels[np.ix_(rows, cols)]


BACKGROUND_LEVEL = 0.45


def render_frames(scenario: Scenario, sensor_sigma: float = 0.02) -> np.ndarray:
    """Rasterize the scenario to a (T, H, W) float stack in [0, 1].

    Objects are drawn in ascending identity order over a featureless
    mid-gray background. A flat background is deliberate: a template cropped
    on background then correlates with later frames only through sensor
    noise, so it cannot keep matching itself the way static clutter texture
    would. Occluder slabs are drawn last in the same gray, which makes a
    hidden object genuinely invisible to photometric matching.
    """
    config = scenario.config
    rng = _stream(config.seed, (4,))
    textures = {identity: _object_texture(config, identity) for identity in scenario.identities}

    frames = np.empty((scenario.n_frames, config.frame_h, config.frame_w))
    for t in range(scenario.n_frames):
        frame = np.full((config.frame_h, config.frame_w), BACKGROUND_LEVEL)
        for identity in scenario.identities:
            # Paint exactly the visible set: an object mostly outside the
            # view is dropped from the image at the same threshold where it
            # leaves the ground truth, so photometric matchers see the world
            # the annotations describe.
            if scenario.is_visible(t, identity):
                _paint(frame, scenario.tracks[identity][t], textures[identity])
        for slab in scenario.occluder_boxes.get(t, ()):
            _paint(frame, slab, BACKGROUND_LEVEL)
        if sensor_sigma > 0:
            frame = frame + rng.normal(0.0, sensor_sigma, frame.shape)
        frames[t] = np.clip(frame, 0.0, 1.0)
    return frames


@dataclass
class MotionStats:
    """Distribution of per-second center displacements, normalized by box size."""

    offsets: np.ndarray
    hist: np.ndarray
    edges: np.ndarray
    mean: float


def motion_histogram(scenario: Scenario, bins: int = 25, max_offset: float = 5.0) -> MotionStats:
    """Normalized per-second motion: |center(t + fps) - center(t)| / sqrt(area).

    Offsets beyond ``max_offset`` are clamped into the last bin rather than
    dropped, so the histogram always sums to the number of samples.
    """
    fps = scenario.config.fps
    offsets = []
    for identity in scenario.identities:
        track = scenario.tracks[identity]
        for t in range(scenario.n_frames - fps):
            a, b = track[t], track[t + fps]
            d = math.hypot(b.cx - a.cx, b.cy - a.cy) / math.sqrt(a.w * a.h)
            offsets.append(d)
    offsets = np.array(offsets)
    if offsets.size == 0:
        raise ValueError("scenario too short for the motion horizon (need > fps frames)")
    edges = np.linspace(0.0, max_offset, bins + 1)
    hist, _ = np.histogram(np.minimum(offsets, max_offset - 1e-9), bins=edges)
    return MotionStats(offsets, hist, edges, float(offsets.mean()))


def write_pgm(path, frame: np.ndarray) -> None:
    """Binary 8-bit PGM writer for quick visual inspection of rendered frames."""
    data = (np.clip(frame, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def gt_rows(scenario: Scenario) -> list:
    """Ground truth as (frame, identity, box, conf=1) rows for MOT-format output."""
    rows = []
    for t in range(scenario.n_frames):
        for identity, box in sorted(scenario.gt_at(t).items()):
            rows.append((t, identity, box, 1.0))
    return rows


def detection_rows(detections_by_frame: Mapping[int, list]) -> list:
    """Detections as (frame, id=-1 placeholder, box, conf) rows; ids are 1-based per frame."""
    rows = []
    for t in sorted(detections_by_frame):
        for i, det in enumerate(detections_by_frame[t], start=1):
            rows.append((t, i, det.box, det.confidence))
    return rows
