"""Learned motion model: photometric features plus the MLP motion head.

Features for a proposal are two normalized patches — the object's appearance
in the current frame and the expanded search window in the next frame — each
resampled to a fixed grid and concatenated. The head predicts a visibility
score and a box-relative motion vector from that single vector, so inference
is one forward pass per track per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox, SearchRegion, decode_motion
from .mlp import MlpHead, SgdMomentum, motion_train_step
from .response import _nearest_resize, crop_pixels
from .triplets import ALL_LABELS, LABEL_POSITIVE, FrameBoxes, Triplet, TripletParams, sample_triplets

TEMPLATE_GRID = 15
SEARCH_GRID = 30


@dataclass(frozen=True)
class FeatureParams:
    """Resample resolutions for the two feature patches."""

    template_grid: int = TEMPLATE_GRID
    search_grid: int = SEARCH_GRID

    def __post_init__(self):
        if self.template_grid < 2 or self.search_grid < 2:
            raise ValueError("feature grids must be at least 2x2")

    @property
    def input_dim(self) -> int:
        return self.template_grid**2 + self.search_grid**2


def _normalized_patch(frame: np.ndarray, box: BBox, grid: int) -> np.ndarray:
    patch = crop_pixels(frame, box).astype(np.float64)
    patch = _nearest_resize(patch, grid, grid)
    std = float(patch.std())
    return (patch - patch.mean()) / max(std, 1e-6)


def patch_features(
    frame_t: np.ndarray,
    frame_next: np.ndarray,
    proposal: BBox,
    search: SearchRegion,
    params: FeatureParams = FeatureParams(),
) -> np.ndarray:
    """Flat feature vector: normalized proposal patch at t ++ search patch at t+1."""
    a = _normalized_patch(frame_t, proposal, params.template_grid)
    b = _normalized_patch(frame_next, search.box, params.search_grid)
    return np.concatenate([a.ravel(), b.ravel()])


def predict_motion(
    head: MlpHead,
    frame_t: np.ndarray,
    frame_next: np.ndarray,
    proposal: BBox,
    search: SearchRegion,
    params: FeatureParams = FeatureParams(),
) -> tuple[float, BBox]:
    """Visibility score and predicted next-frame box for one proposal."""
    features = patch_features(frame_t, frame_next, proposal, search, params)
    v, motion = head.forward(features)
    return v, decode_motion(proposal, motion)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1.0e-4
    lr_decay: float = 0.1
    decay_at: tuple[float, float] = (0.6, 0.8)
    hidden_dim: int = 64
    seed: int = 0
    labels: Sequence[str] = ALL_LABELS
    features: FeatureParams = FeatureParams()
    triplets: TripletParams = TripletParams()


def triplet_batch_arrays(
    frames: np.ndarray,
    triplets: Sequence[Triplet],
    params: FeatureParams,
    delta: int,
) -> list[tuple[np.ndarray, float, object]]:
    """Materialize (features, v_star, m_star) samples for the trainer."""
    batch = []
    for t in triplets:
        features = patch_features(frames[t.frame], frames[t.frame + delta], t.proposal, t.search, params)
        v_star = 1.0 if t.label == LABEL_POSITIVE else 0.0
        batch.append((features, v_star, t.target))
    return batch


@dataclass
class TrainHistory:
    epoch_losses: list = field(default_factory=list)
    n_samples: int = 0
    label_counts: dict = field(default_factory=dict)


def train_motion_head(
    frames: np.ndarray,
    gt_by_frame: Mapping[int, FrameBoxes],
    config: TrainConfig = TrainConfig(),
    head: Optional[MlpHead] = None,
) -> tuple[MlpHead, TrainHistory]:
    """Fit the motion head on triplets sampled from one annotated sequence.

    ``frames`` is a (T, H, W) raster stack; ``gt_by_frame`` maps frame index
    to {identity: box} for visible objects. The learning rate decays by
    ``lr_decay`` at the two ``decay_at`` fractions of the epoch budget.
    """
    rng = np.random.default_rng(config.seed)
    frame_h, frame_w = frames.shape[1:]
    triplets = sample_triplets(gt_by_frame, frame_w, frame_h, config.triplets, rng, labels=config.labels)
    if not triplets:
        raise ValueError("no training triplets could be sampled")
    samples = triplet_batch_arrays(frames, triplets, config.features, config.triplets.delta)

    if head is None:
        head = MlpHead.initialize(config.features.input_dim, config.hidden_dim, rng)
    opt = SgdMomentum(lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    decay_epochs = {int(f * config.epochs) for f in config.decay_at}

    history = TrainHistory(n_samples=len(samples))
    for t in triplets:
        history.label_counts[t.label] = history.label_counts.get(t.label, 0) + 1

    order = np.arange(len(samples))
    for epoch in range(config.epochs):
        if epoch in decay_epochs:
            opt.lr *= config.lr_decay
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            losses.append(motion_train_step(head, opt, batch))
        history.epoch_losses.append(float(np.mean(losses)))
    return head, history


def false_visibility_rate(
    head: MlpHead,
    frames: np.ndarray,
    triplets: Sequence[Triplet],
    params: FeatureParams = FeatureParams(),
    delta: int = 1,
    alpha: float = 0.4,
) -> float:
    """Fraction of non-positive triplets scored visible (v >= alpha).

    This is the head's key failure mode in tracking: confidently following
    an object that has left the search region spawns identity switches.
    """
    flagged = 0
    total = 0
    for t in triplets:
        if t.label == LABEL_POSITIVE:
            continue
        features = patch_features(frames[t.frame], frames[t.frame + delta], t.proposal, t.search, params)
        v, _ = head.forward(features)
        total += 1
        if v >= alpha:
            flagged += 1
    if total == 0:
        raise ValueError("no non-positive triplets to evaluate")
    return flagged / total
