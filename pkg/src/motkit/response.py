"""Dense template-matching machinery.

A matcher produces :class:`ResponseMaps` over a search grid: a visibility
map ``v`` and a 4-channel offset map ``p`` (left, top, right, bottom pixel
distances from each cell center to the candidate box sides). Decoding picks
the best cell under a motion penalty and reconstructs the box from the
offsets. Two concrete producers are provided: photometric NCC matching on
raster frames and a ground-truth oracle for isolating downstream behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .geometry import BBox, SearchRegion
from .losses import EPS, centerness, focal_loss, iou_loss

DEFAULT_SCALES = (0.95, 1.0, 1.05)
DEFAULT_STRIDE = 2.0
# Visibility reported when the oracle has no target in the search region.
ABSENT_VISIBILITY = 0.05


@dataclass(frozen=True)
class GridGeometry:
    """Maps grid cell indices to frame coordinates.

    ``(origin_x, origin_y)`` is the frame position of cell (0, 0)'s center;
    cell ``(ix, iy)`` sits at ``origin + i * cell``. ``width`` counts columns,
    ``height`` rows.
    """

    origin_x: float
    origin_y: float
    cell_w: float
    cell_h: float
    width: int
    height: int

    def __post_init__(self):
        if self.cell_w <= 0 or self.cell_h <= 0:
            raise ValueError("cell sizes must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.origin_x + ix * self.cell_w, self.origin_y + iy * self.cell_h)

    def centers_x(self) -> np.ndarray:
        return self.origin_x + np.arange(self.width) * self.cell_w

    def centers_y(self) -> np.ndarray:
        return self.origin_y + np.arange(self.height) * self.cell_h

    @classmethod
    def cover(cls, box: BBox, width: int, height: int) -> "GridGeometry":
        """Grid whose cells tile ``box`` exactly."""
        cell_w = box.w / width
        cell_h = box.h / height
        return cls(box.x + cell_w / 2.0, box.y + cell_h / 2.0, cell_w, cell_h, width, height)

    @classmethod
    def strided(cls, box: BBox, stride: float) -> "GridGeometry":
        """Grid of fixed-size cells centered on ``box``; at least 2x2."""
        width = max(2, int(round(box.w / stride)))
        height = max(2, int(round(box.h / stride)))
        origin_x = box.cx - (width - 1) / 2.0 * stride
        origin_y = box.cy - (height - 1) / 2.0 * stride
        return cls(origin_x, origin_y, stride, stride, width, height)


@dataclass
class ResponseMaps:
    """Visibility map v (H, W) in [0, 1] and offset map p (4, H, W), both float64."""

    geometry: GridGeometry
    v: np.ndarray
    p: np.ndarray

    def validate(self) -> None:
        g = self.geometry
        if self.v.shape != (g.height, g.width):
            raise ValueError(f"v shape {self.v.shape} does not match grid {(g.height, g.width)}")
        if self.p.shape != (4, g.height, g.width):
            raise ValueError(f"p shape {self.p.shape} does not match grid")
        if np.any(self.v < 0) or np.any(self.v > 1):
            raise ValueError("v outside [0, 1]")
        if np.any(self.p < 0):
            raise ValueError("negative offsets in p")


@dataclass(frozen=True)
class PenaltyParams:
    """Weighting of the position window vs the scale-consistency term."""

    lam: float = 0.4
    sigma_scale: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")


# Fast-motion preset: barely penalize candidates far from the previous center.
FAST_MOTION_PENALTY = PenaltyParams(lam=0.1)


def cross_correlate(search: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Channel-wise valid-mode cross-correlation of a template over a search grid.

    search: (C, Hs, Ws), template: (C, Ht, Wt); returns (C, Hs-Ht+1, Ws-Wt+1),
    one similarity map per channel.
    """
    search = np.asarray(search, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if search.ndim != 3 or template.ndim != 3:
        raise ValueError("search and template must be 3-D (channels first)")
    if search.shape[0] != template.shape[0]:
        raise ValueError("channel count mismatch")
    if template.shape[1] > search.shape[1] or template.shape[2] > search.shape[2]:
        raise ValueError("template larger than search grid")
    return backend.correlate_valid(search, template)


def _cosine_window(n: int, peak: int) -> np.ndarray:
    """1-D raised-cosine window: 1 at ``peak``, 0 at the farther border."""
    half = max(peak, n - 1 - peak, 1)
    phase = np.minimum(np.abs(np.arange(n) - peak) / half, 1.0) * (np.pi / 2.0)
    return np.cos(phase) ** 2


def penalty_map(geometry: GridGeometry, p: np.ndarray, prev_box: BBox, params: PenaltyParams) -> np.ndarray:
    """Score in [0, 1] per cell discouraging large position and scale jumps.

    Combines a separable cosine window peaked at the cell nearest the
    previous box center with a Gaussian on the log scale change of the
    candidate encoded in ``p``.
    """
    peak_x = int(np.clip(round((prev_box.cx - geometry.origin_x) / geometry.cell_w), 0, geometry.width - 1))
    peak_y = int(np.clip(round((prev_box.cy - geometry.origin_y) / geometry.cell_h), 0, geometry.height - 1))
    window = np.outer(_cosine_window(geometry.height, peak_y), _cosine_window(geometry.width, peak_x))
    if params.lam == 1.0:
        return window

    w_cand = p[0] + p[2]
    h_cand = p[1] + p[3]
    scale = np.zeros_like(w_cand)
    ok = (w_cand > 0) & (h_cand > 0)
    dw = np.log(np.where(ok, w_cand, 1.0) / prev_box.w)
    dh = np.log(np.where(ok, h_cand, 1.0) / prev_box.h)
    scale[ok] = np.exp(-(dw[ok] ** 2 + dh[ok] ** 2) / (2.0 * params.sigma_scale**2))
    return params.lam * window + (1.0 - params.lam) * scale


def decode_response(
    maps: ResponseMaps,
    prev_box: BBox,
    params: PenaltyParams,
    penalized_visibility: bool = False,
) -> tuple[BBox, float]:
    """Pick the penalty-weighted best cell and reconstruct its box.

    The reported visibility is the raw map value at the selected cell;
    pass ``penalized_visibility=True`` to report the penalized score
    instead. Ties resolve to the smallest row-major index.
    """
    eta = penalty_map(maps.geometry, maps.p, prev_box, params)
    score = maps.v * eta
    iy, ix = np.unravel_index(int(np.argmax(score)), score.shape)
    cx, cy = maps.geometry.cell_center(int(ix), int(iy))
    left, top, right, bottom = maps.p[:, iy, ix]
    w = max(left + right, 1e-6)
    h = max(top + bottom, 1e-6)
    box = BBox(cx - left, cy - top, w, h)
    vis = float(score[iy, ix]) if penalized_visibility else float(maps.v[iy, ix])
    return box, vis


def target_maps(geometry: GridGeometry, gt_box: BBox) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth maps for a box: binary v (cell centers strictly inside)
    and exact corner offsets p, clamped at 0 outside the box."""
    xs = geometry.centers_x()[None, :]
    ys = geometry.centers_y()[:, None]
    inside = (xs > gt_box.x) & (xs < gt_box.x2) & (ys > gt_box.y) & (ys < gt_box.y2)
    v = inside.astype(np.float64)
    p = np.stack(
        [
            np.broadcast_to(xs - gt_box.x, v.shape),
            np.broadcast_to(ys - gt_box.y, v.shape),
            np.broadcast_to(gt_box.x2 - xs, v.shape),
            np.broadcast_to(gt_box.y2 - ys, v.shape),
        ]
    )
    return v, np.maximum(p, 0.0)


def dense_match_loss(
    maps: ResponseMaps,
    gt_box: BBox,
    gamma: float = 2.0,
    alpha_f: float = 0.25,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Training loss for a response map against a ground-truth box.

    Focal loss over every cell of the visibility map, plus centerness-weighted
    negative-log-IOU regression at cells whose center falls inside the box.
    Returns ``(loss, dloss_dv, dloss_dp)``. A box that misses the grid
    entirely yields a classification-only loss.
    """
    v_star, p_star = target_maps(maps.geometry, gt_box)
    cls_loss, dv = focal_loss(maps.v, v_star, gamma=gamma, alpha_f=alpha_f)
    total = float(np.sum(cls_loss))
    dp = np.zeros_like(maps.p)
    for iy, ix in zip(*np.nonzero(v_star)):
        cx, cy = maps.geometry.cell_center(int(ix), int(iy))
        weight = centerness(cx, cy, gt_box)
        reg_loss, reg_grad = iou_loss(maps.p[:, iy, ix], p_star[:, iy, ix])
        total += weight * reg_loss
        dp[:, iy, ix] = weight * reg_grad
    return total, dv, dp


def _nearest_resize(patch: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = np.minimum((np.arange(out_h) + 0.5) * patch.shape[0] / out_h, patch.shape[0] - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * patch.shape[1] / out_w, patch.shape[1] - 1).astype(np.int64)
    return patch[np.ix_(rows, cols)]


def crop_pixels(frame: np.ndarray, box: BBox) -> np.ndarray:
    """Integer-pixel crop of ``box`` from a 2-D raster, clipped to the frame."""
    y0 = max(0, int(round(box.y)))
    x0 = max(0, int(round(box.x)))
    y1 = min(frame.shape[0], max(y0 + 1, int(round(box.y2))))
    x1 = min(frame.shape[1], max(x0 + 1, int(round(box.x2))))
    if y1 <= y0 or x1 <= x0:
        raise ValueError("crop box lies outside the frame")
    return frame[y0:y1, x0:x1]


def match_template_patch(
    template_patch: np.ndarray,
    base_box: BBox,
    frame_curr: np.ndarray,
    search: SearchRegion,
    scales=DEFAULT_SCALES,
    stride: float = DEFAULT_STRIDE,
) -> ResponseMaps:
    """NCC response of a stored template patch over a search region.

    ``base_box`` supplies the nominal box size that the offset map encodes
    (scaled per cell by the best-matching scale). Visibility is the
    correlation clamped to [0, 1] and maximized over scales, so an
    uncorrelated (or anti-correlated) candidate scores near zero rather
    than one half. Candidates extending past the image border are scored on
    padded pixels, so their correlation is discounted by the in-frame
    fraction of the patch: replicated border rows otherwise correlate
    suspiciously well with any smooth template, and a match built on pixels
    that do not exist should not count as evidence.
    """
    if template_patch.size == 0:
        raise ValueError("empty template patch")
    geom = GridGeometry.strided(search.unclipped, stride)
    cx = np.repeat(geom.centers_x()[None, :], geom.height, axis=0).ravel()
    cy = np.repeat(geom.centers_y()[:, None], geom.width, axis=1).ravel()

    frame_h, frame_w = frame_curr.shape
    best_v = np.full(geom.height * geom.width, -np.inf)
    best_scale = np.full(geom.height * geom.width, 1.0)
    for scale in scales:
        th = max(1, int(round(template_patch.shape[0] * scale)))
        tw = max(1, int(round(template_patch.shape[1] * scale)))
        scaled = _nearest_resize(template_patch, th, tw)
        tops = np.round(cy - th / 2.0).astype(np.int64)
        lefts = np.round(cx - tw / 2.0).astype(np.int64)
        pad_top = max(0, int(-tops.min()))
        pad_left = max(0, int(-lefts.min()))
        pad_bottom = max(0, int(tops.max() + th - frame_h))
        pad_right = max(0, int(lefts.max() + tw - frame_w))
        padded = np.pad(frame_curr, ((pad_top, pad_bottom), (pad_left, pad_right)), mode="edge")
        ncc = backend.ncc_at(padded, scaled, tops + pad_top, lefts + pad_left)
        inside_h = np.clip(np.minimum(tops + th, frame_h) - np.maximum(tops, 0), 0, th)
        inside_w = np.clip(np.minimum(lefts + tw, frame_w) - np.maximum(lefts, 0), 0, tw)
        support = (inside_h * inside_w) / float(th * tw)
        v_scale = np.clip(ncc, 0.0, 1.0) * support
        better = v_scale > best_v
        best_v[better] = v_scale[better]
        best_scale[better] = scale

    v = np.clip(best_v, 0.0, 1.0).reshape(geom.height, geom.width)
    half_w = (base_box.w * best_scale / 2.0).reshape(geom.height, geom.width)
    half_h = (base_box.h * best_scale / 2.0).reshape(geom.height, geom.width)
    p = np.stack([half_w, half_h, half_w, half_h])
    return ResponseMaps(geom, v, p)


def ncc_match(
    frame_prev: np.ndarray,
    frame_curr: np.ndarray,
    template_box: BBox,
    search: SearchRegion,
    scales=DEFAULT_SCALES,
    stride: float = DEFAULT_STRIDE,
) -> ResponseMaps:
    """Photometric matcher: NCC of the previous-frame template over the search region."""
    patch = crop_pixels(frame_prev, template_box)
    return match_template_patch(patch, template_box, frame_curr, search, scales=scales, stride=stride)


@dataclass(frozen=True)
class OracleNoise:
    """Corruption applied to oracle response maps; zero sigmas mean exact maps."""

    jitter_sigma: float = 0.0
    scale_sigma: float = 0.0
    seed: int = 0


def oracle_match(
    gt_next: BBox | None,
    geometry: GridGeometry,
    noise: OracleNoise = OracleNoise(),
    rng: np.random.Generator | None = None,
) -> ResponseMaps:
    """Ground-truth response maps, optionally jittered; low flat v when absent."""
    if gt_next is None:
        v = np.full((geometry.height, geometry.width), ABSENT_VISIBILITY)
        p = np.full((4, geometry.height, geometry.width), max(geometry.cell_w, geometry.cell_h) / 2.0)
        return ResponseMaps(geometry, v, p)
    box = gt_next
    if noise.jitter_sigma > 0 or noise.scale_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
        jx, jy = rng.normal(0.0, max(noise.jitter_sigma, EPS), size=2)
        sw, sh = np.exp(rng.normal(0.0, max(noise.scale_sigma, EPS), size=2))
        w, h = box.w * sw, box.h * sh
        box = BBox(box.cx + jx - w / 2.0, box.cy + jy - h / 2.0, w, h)
    v, p = target_maps(geometry, box)
    return ResponseMaps(geometry, v, p)
