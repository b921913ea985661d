"""Tracking evaluation: CLEAR metrics, identity F1, Track-AP, and file IO.

Tracks are represented as ``{identity: {frame: BBox}}`` mappings for both
ground truth and predictions. The on-disk format is the comma-separated
``frame,id,x,y,w,h,conf,-1,-1,-1`` convention with 1-based frame numbers;
in memory frames are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, iou

# identity -> frame -> BBox
TrackSet = dict


class MotFormatError(ValueError):
    """Raised for malformed track files; the message names file and line."""


def hungarian(cost: np.ndarray) -> list:
    """Minimum-cost one-to-one assignment on a rectangular cost matrix.

    Returns (row, col) index pairs; unassignable rows/columns (in the larger
    dimension) are simply absent.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


@dataclass
class ClearResult:
    mota: float
    motp: float
    idsw: int
    fn: int
    fp: int
    tp: int
    n_gt: int


def clear_mot(gt: TrackSet, pred: TrackSet, iou_thr: float = 0.5) -> ClearResult:
    """Frame-by-frame CLEAR metrics with match persistence.

    A ground-truth object keeps its previous frame's assignment while the
    overlap stays above threshold; only unmatched objects enter the per-frame
    optimal assignment. An identity switch is counted when a matched object's
    id differs from the last id it was ever matched to, so switches across
    occlusion gaps are counted too. MOTP is the mean overlap of true
    positives.
    """
    gt_frames = {t for track in gt.values() for t in track}
    pred_frames = {t for track in pred.values() for t in track}
    frames = sorted(gt_frames | pred_frames)

    matches: dict = {}
    last_match: dict = {}
    tp = fp = fn = idsw = 0
    n_gt = 0
    overlap_sum = 0.0

    for t in frames:
        gt_t = {g: track[t] for g, track in gt.items() if t in track}
        pred_t = {p: track[t] for p, track in pred.items() if t in track}
        n_gt += len(gt_t)

        new_matches = {}
        for g, p in matches.items():
            if g in gt_t and p in pred_t and iou(gt_t[g], pred_t[p]) >= iou_thr:
                new_matches[g] = p

        free_gt = [g for g in sorted(gt_t) if g not in new_matches]
        used_pred = set(new_matches.values())
        free_pred = [p for p in sorted(pred_t) if p not in used_pred]
        if free_gt and free_pred:
            cost = np.ones((len(free_gt), len(free_pred)))
            for i, g in enumerate(free_gt):
                for j, p in enumerate(free_pred):
                    cost[i, j] = 1.0 - iou(gt_t[g], pred_t[p])
            for i, j in hungarian(cost):
                if 1.0 - cost[i, j] >= iou_thr:
                    new_matches[free_gt[i]] = free_pred[j]

        for g, p in new_matches.items():
            if g in last_match and last_match[g] != p:
                idsw += 1
            last_match[g] = p
            overlap_sum += iou(gt_t[g], pred_t[p])

        tp += len(new_matches)
        fn += len(gt_t) - len(new_matches)
        fp += len(pred_t) - len(new_matches)
        matches = new_matches

    mota = 1.0 - (fn + fp + idsw) / n_gt if n_gt else 0.0
    motp = overlap_sum / tp if tp else 0.0
    return ClearResult(mota, motp, idsw, fn, fp, tp, n_gt)


@dataclass
class IdResult:
    idf1: float
    idtp: int
    idfp: int
    idfn: int


def id_overlap_matrix(gt: TrackSet, pred: TrackSet, iou_thr: float = 0.5):
    """Matrix of per-identity-pair true-positive frame counts."""
    gt_ids = sorted(gt)
    pred_ids = sorted(pred)
    m = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    for i, g in enumerate(gt_ids):
        for j, p in enumerate(pred_ids):
            count = 0
            track_g, track_p = gt[g], pred[p]
            for t, box in track_g.items():
                other = track_p.get(t)
                if other is not None and iou(box, other) >= iou_thr:
                    count += 1
            m[i, j] = count
    return gt_ids, pred_ids, m


def idf1(gt: TrackSet, pred: TrackSet, iou_thr: float = 0.5) -> IdResult:
    """Identity F1: one global identity-to-identity assignment maximizing the
    number of per-frame true positives, scored as an F1 over box counts."""
    gt_ids, pred_ids, m = id_overlap_matrix(gt, pred, iou_thr)
    total_gt = sum(len(track) for track in gt.values())
    total_pred = sum(len(track) for track in pred.values())
    idtp = 0
    if m.size:
        for i, j in hungarian(-m.astype(np.float64)):
            idtp += int(m[i, j])
    idfn = total_gt - idtp
    idfp = total_pred - idtp
    denom = 2 * idtp + idfp + idfn
    return IdResult(2.0 * idtp / denom if denom else 0.0, idtp, idfp, idfn)


def iou_3d(a: Mapping[int, BBox], b: Mapping[int, BBox]) -> float:
    """Spatio-temporal overlap: summed per-frame intersection over summed
    per-frame union, over the union of both lifespans."""
    inter = 0.0
    union = 0.0
    for t in set(a) | set(b):
        box_a = a.get(t)
        box_b = b.get(t)
        if box_a is not None and box_b is not None:
            ix = max(0.0, min(box_a.x2, box_b.x2) - max(box_a.x, box_b.x))
            iy = max(0.0, min(box_a.y2, box_b.y2) - max(box_a.y, box_b.y))
            i = ix * iy
            inter += i
            union += box_a.area + box_b.area - i
        elif box_a is not None:
            union += box_a.area
        else:
            union += box_b.area
    return inter / union if union > 0 else 0.0


def average_precision(tp_flags: Sequence[int], n_gt: int) -> float:
    """All-points interpolated AP from ordered hit/miss flags."""
    if n_gt <= 0:
        raise ValueError("need at least one ground-truth track")
    if not tp_flags:
        return 0.0
    flags = np.asarray(tp_flags, dtype=np.float64)
    cum_tp = np.cumsum(flags)
    precision = cum_tp / (np.arange(len(flags)) + 1.0)
    recall = cum_tp / n_gt
    # Monotone envelope of precision, then area under the step curve.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def track_ap(
    gt: TrackSet,
    pred: TrackSet,
    scores: Mapping[int, float],
    iou3d_thr: float = 0.5,
) -> float:
    """Track-level average precision at a spatio-temporal overlap threshold.

    Predicted tracks are processed in descending score (ties keep id order);
    each greedily claims the best still-unclaimed ground-truth track if the
    overlap clears the threshold.
    """
    pred_ids = sorted(pred, key=lambda p: (-scores.get(p, 0.0), p))
    gt_ids = sorted(gt)
    claimed = set()
    tp_flags = []
    for p in pred_ids:
        best_g, best_overlap = None, 0.0
        for g in gt_ids:
            if g in claimed:
                continue
            overlap = iou_3d(gt[g], pred[p])
            if overlap > best_overlap:
                best_g, best_overlap = g, overlap
        if best_g is not None and best_overlap >= iou3d_thr:
            claimed.add(best_g)
            tp_flags.append(1)
        else:
            tp_flags.append(0)
    return average_precision(tp_flags, len(gt_ids))


@dataclass
class EvalReport:
    """Bundle of all tracking metrics for one (gt, prediction) pair."""

    mota: float
    motp: float
    idsw: int
    fn: int
    fp: int
    tp: int
    n_gt: int
    idf1: float
    idtp: int
    idfp: int
    idfn: int
    track_ap: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "mota": self.mota,
            "motp": self.motp,
            "idsw": self.idsw,
            "fn": self.fn,
            "fp": self.fp,
            "tp": self.tp,
            "n_gt": self.n_gt,
            "idf1": self.idf1,
            "idtp": self.idtp,
            "idfp": self.idfp,
            "idfn": self.idfn,
        }
        if self.track_ap is not None:
            out["track_ap"] = self.track_ap
        return out

    def summary(self) -> str:
        parts = [
            f"MOTA {self.mota:.4f}",
            f"MOTP {self.motp:.4f}",
            f"IDF1 {self.idf1:.4f}",
            f"IDsw {self.idsw}",
            f"FN {self.fn}",
            f"FP {self.fp}",
        ]
        if self.track_ap is not None:
            parts.append(f"Track-AP {self.track_ap:.4f}")
        return "  ".join(parts)


def evaluate(
    gt: TrackSet,
    pred: TrackSet,
    scores: Optional[Mapping[int, float]] = None,
    iou_thr: float = 0.5,
) -> EvalReport:
    clear = clear_mot(gt, pred, iou_thr)
    ids = idf1(gt, pred, iou_thr)
    ap = track_ap(gt, pred, scores, iou_thr) if scores is not None and gt else None
    return EvalReport(
        clear.mota,
        clear.motp,
        clear.idsw,
        clear.fn,
        clear.fp,
        clear.tp,
        clear.n_gt,
        ids.idf1,
        ids.idtp,
        ids.idfp,
        ids.idfn,
        ap,
    )


def rows_to_trackset(rows: Sequence) -> tuple[TrackSet, dict]:
    """(frame, id, box, conf) rows -> track mapping plus mean-confidence scores."""
    tracks: TrackSet = {}
    conf_sums: dict = {}
    for frame, tid, box, conf in rows:
        tracks.setdefault(tid, {})[frame] = box
        total, n = conf_sums.get(tid, (0.0, 0))
        conf_sums[tid] = (total + conf, n + 1)
    scores = {tid: total / n for tid, (total, n) in conf_sums.items()}
    return tracks, scores


def save_mot_file(path, rows: Sequence, comments: Sequence[str] = ()) -> None:
    """Write (frame, id, box, conf) rows in the comma-separated track format.

    In-memory 0-based frame indices become 1-based on disk. ``comments`` are
    emitted first as ``#``-prefixed header lines.
    """
    with open(path, "w", encoding="ascii") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        for frame, tid, box, conf in rows:
            fh.write(
                f"{frame + 1},{tid},{box.x:.3f},{box.y:.3f},{box.w:.3f},{box.h:.3f},{conf:.4f},-1,-1,-1\n"
            )


def load_mot_file(path) -> list:
    """Read a comma-separated track file into (frame, id, box, conf) rows.

    Blank lines and ``#`` comments are skipped. Any malformed line raises
    :class:`MotFormatError` naming the file and 1-based line number.
    """
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(",")
            if len(parts) < 7:
                raise MotFormatError(f"{path}:{lineno}: expected at least 7 comma-separated fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                tid = int(parts[1])
                x, y, w, h, conf = (float(v) for v in parts[2:7])
            except ValueError:
                raise MotFormatError(f"{path}:{lineno}: non-numeric field in {text!r}") from None
            if frame < 1:
                raise MotFormatError(f"{path}:{lineno}: frame numbers are 1-based, got {frame}")
            if w <= 0 or h <= 0:
                raise MotFormatError(f"{path}:{lineno}: box size must be positive, got {w}x{h}")
            if not np.isfinite([x, y, w, h, conf]).all():
                raise MotFormatError(f"{path}:{lineno}: non-finite value")
            rows.append((frame - 1, tid, BBox(x, y, w, h), conf))
    return rows


def load_trackset(path) -> tuple[TrackSet, dict]:
    """Convenience: load a track file straight into the evaluation representation."""
    return rows_to_trackset(load_mot_file(path))
