"""Ground-truth labeling via camera footprints, PR/F1 scoring, and benchmarks.

Window pairs are labeled by the maximum intersection-over-union of the
flat-ground camera footprints across the windows' keyframe intervals. A
returned correspondence counts as correct when its pair overlaps at all
(IoU above the false-positive floor); recall is measured against pairs with
substantial overlap.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignmentParams, align_maps, window_offsets
from .geometry import CameraIntrinsics, Pose
from .reconstruct import VehicleMap
from .simulate import GroundTruth

__all__ = [
    "FootprintQuad",
    "PairLabel",
    "PRCurve",
    "ScoredPair",
    "HorizonError",
    "POSITIVE_IOU",
    "NEGATIVE_IOU",
    "footprint",
    "quad_iou",
    "label_pairs",
    "precision_recall",
    "bench_search",
    "write_labels_csv",
    "write_pr_csv",
    "write_bench_csv",
]

POSITIVE_IOU = 0.333  # pairs above this must be retrieved
NEGATIVE_IOU = 0.01  # pairs at or below this make a returned match a false positive


class HorizonError(ValueError):
    """An image-corner ray missed the ground plane (camera sees the horizon)."""


@dataclass(frozen=True)
class FootprintQuad:
    """Convex ground-plane quad visible from a camera, in winding order."""

    corners: np.ndarray  # (4,2) m

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float).reshape(4, 2)
        object.__setattr__(self, "corners", c)
        e = np.roll(c, -1, axis=0) - c
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if not (np.all(cross >= -1e-9) or np.all(cross <= 1e-9)):
            raise ValueError("footprint corners are not convex in winding order")

    @property
    def area(self) -> float:
        return _polygon_area(self.corners)


@dataclass(frozen=True)
class PairLabel:
    """Ground-truth label of one window pair."""

    pair: tuple[int, int]
    iou: float
    label: str  # positive | ignore | negative


@dataclass(frozen=True)
class ScoredPair:
    """A matcher decision as read back from a hypothesis report."""

    offset_i: int
    offset_j: int
    score: int
    angular_ok: bool


@dataclass
class PRCurve:
    thresholds: list[int]
    precision: list[float]
    recall: list[float]
    f1: list[float] = field(default_factory=list)
    average_f1: float = 0.0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")

    def recall_at_precision(self, min_precision: float) -> float:
        vals = [r for p, r in zip(self.precision, self.recall) if p >= min_precision]
        return max(vals) if vals else 0.0


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _ccw(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    signed = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return pts if signed >= 0 else pts[::-1]


def footprint(pose: Pose, intr: CameraIntrinsics, ground_z: float) -> FootprintQuad:
    """Intersection of the four image-corner rays with the plane z = ground_z."""
    if pose.translation[2] <= ground_z:
        raise ValueError("camera center must be strictly above the ground plane")
    corners_px = [
        (0.0, 0.0),
        (float(intr.width), 0.0),
        (float(intr.width), float(intr.height)),
        (0.0, float(intr.height)),
    ]
    pts = []
    for u, v in corners_px:
        d = pose.rotation @ np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
        if d[2] >= -1e-12:
            raise HorizonError("corner ray does not descend to the ground plane")
        t = (ground_z - pose.translation[2]) / d[2]
        p = pose.translation + t * d
        pts.append(p[:2])
    return FootprintQuad(np.array(pts))


def _clip(subject: np.ndarray, clip_poly: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    output = list(subject)
    for k in range(len(clip_poly)):
        a = clip_poly[k]
        b = clip_poly[(k + 1) % len(clip_poly)]
        if not output:
            return np.zeros((0, 2))
        inputs = output
        output = []
        edge = b - a

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= -1e-12

        s = inputs[-1]
        for e in inputs:
            if inside(e):
                if not inside(s):
                    output.append(_intersect(s, e, a, b))
                output.append(e)
            elif inside(s):
                output.append(_intersect(s, e, a, b))
            s = e
    return np.array(output) if output else np.zeros((0, 2))


def _intersect(p1, p2, a, b):
    d1 = p2 - p1
    d2 = b - a
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((a[0] - p1[0]) * d2[1] - (a[1] - p1[1]) * d2[0]) / denom
    return p1 + t * d1


def quad_iou(qa: FootprintQuad, qb: FootprintQuad) -> float:
    """Intersection-over-union of two convex quads via polygon clipping."""
    pa = _ccw(qa.corners)
    pb = _ccw(qb.corners)
    inter_poly = _clip(pa, pb)
    inter = _polygon_area(inter_poly) if len(inter_poly) >= 3 else 0.0
    union = qa.area + qb.area - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def _window_intervals(vmap: VehicleMap, params: AlignmentParams) -> list[tuple[int, int]]:
    """Keyframe interval spanned by each window: first keyframe of its first
    object through last keyframe of its last object."""
    n = len(vmap)
    count = (n + params.SL - 1) // params.SL
    out = []
    for s in range(count):
        lo = s * params.SL
        hi = min(lo + params.WL, n)
        out.append(
            (vmap.objects[lo].source_keyframes[0], vmap.objects[hi - 1].source_keyframes[1])
        )
    return out


class _TraverseSamples:
    """Arc-spaced keyframe samples of one traverse, with lazy footprints.

    Sampling at a quarter of the footprint extent guarantees that whenever
    two intervals overlap on the ground, some sampled pose pair lies well
    inside the overlap; footprints are only evaluated near candidate maxima.
    """

    def __init__(self, gt: GroundTruth):
        self.gt = gt
        pos = np.array([p.translation for p in gt.true_poses])
        h = float(np.median(pos[:, 2]) - gt.ground_z)
        intr = gt.intrinsics
        self.radius = 0.5 * h * math.hypot(intr.width / intr.fx, intr.height / intr.fy)
        fp_min = h * min(intr.width / intr.fx, intr.height / intr.fy)
        step = max(fp_min / 3.0, 1e-6)
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])
        kfs = [0]
        last = 0.0
        for k in range(1, len(pos)):
            if arc[k] - last >= step:
                kfs.append(k)
                last = arc[k]
        if kfs[-1] != len(pos) - 1:
            kfs.append(len(pos) - 1)
        self.kfs = np.array(kfs)
        self.xy = pos[self.kfs][:, :2].astype(np.float32)
        self._cache: dict[int, FootprintQuad] = {}

    def span(self, a: int, b: int) -> tuple[int, int]:
        lo = int(np.searchsorted(self.kfs, a, side="left"))
        hi = int(np.searchsorted(self.kfs, b, side="right"))
        return lo, max(hi, lo + 1)

    def bbox(self, lo: int, hi: int) -> np.ndarray:
        xy = self.xy[lo:hi]
        return np.concatenate([xy.min(axis=0), xy.max(axis=0)])

    def quad(self, sample_idx: int) -> FootprintQuad:
        kf = int(self.kfs[sample_idx])
        if kf not in self._cache:
            self._cache[kf] = footprint(self.gt.true_poses[kf], self.gt.intrinsics, self.gt.ground_z)
        return self._cache[kf]


def label_pairs(
    gt_i: GroundTruth,
    gt_j: GroundTruth,
    map_i: VehicleMap,
    map_j: VehicleMap,
    params: AlignmentParams,
    positive_iou: float = POSITIVE_IOU,
    negative_iou: float = NEGATIVE_IOU,
    max_evals: int = 64,
) -> list[PairLabel]:
    """Label every window pair by max footprint IoU over its keyframe intervals.

    The cross product is subsampled adaptively: poses are sampled along arc
    length, pairs whose centers are too far apart to overlap are skipped
    outright, and quad IoU is evaluated only for the closest ``max_evals``
    sampled pose pairs, where the maximum must lie.
    """
    if not gt_i.true_poses or not gt_j.true_poses:
        raise ValueError("ground-truth poses are required for labeling")
    ivals_i = _window_intervals(map_i, params)
    ivals_j = _window_intervals(map_j, params)
    tr_i = _TraverseSamples(gt_i)
    tr_j = _TraverseSamples(gt_j)

    # one global distance table; every window pair reads a block of it
    dist = np.linalg.norm(tr_i.xy[:, None, :] - tr_j.xy[None, :, :], axis=2)
    reach = tr_i.radius + tr_j.radius

    spans_i = [tr_i.span(a, b) for a, b in ivals_i]
    spans_j = [tr_j.span(a, b) for a, b in ivals_j]
    boxes_i = [tr_i.bbox(lo, hi) for lo, hi in spans_i]
    boxes_j = [tr_j.bbox(lo, hi) for lo, hi in spans_j]

    labels = []
    for si, (lo_i, hi_i) in enumerate(spans_i):
        bi = boxes_i[si]
        for sj, (lo_j, hi_j) in enumerate(spans_j):
            bj = boxes_j[sj]
            # bounding-box gap rules out most pairs without touching the block
            dx = max(0.0, bj[0] - bi[2], bi[0] - bj[2])
            dy = max(0.0, bj[1] - bi[3], bi[1] - bj[3])
            best = 0.0
            if math.hypot(dx, dy) <= reach:
                block = dist[lo_i:hi_i, lo_j:hi_j]
                if block.size and float(block.min()) <= reach:
                    flat = block.ravel()
                    near = np.nonzero(flat <= reach)[0]
                    if len(near) > max_evals:
                        near = near[np.argsort(flat[near], kind="stable")[:max_evals]]
                    w = block.shape[1]
                    for f in near:
                        qa = tr_i.quad(lo_i + int(f) // w)
                        qb = tr_j.quad(lo_j + int(f) % w)
                        best = max(best, quad_iou(qa, qb))
            if best > positive_iou:
                lab = "positive"
            elif best <= negative_iou:
                lab = "negative"
            else:
                lab = "ignore"
            labels.append(PairLabel(pair=(si, sj), iou=best, label=lab))
    return labels


def precision_recall(hypotheses, labels: list[PairLabel], thresholds) -> PRCurve:
    """PR curve over association-count thresholds.

    A pair is predicted positive when its score exceeds the threshold and its
    angular gate passed. Predictions on ignore-labeled pairs do not count for
    precision; recall is over positive-labeled pairs. With no predictions,
    precision is 1 by convention.

    The average F1 is the mean of F1 at the lowest threshold reaching
    precision >= 0.99 and at the highest threshold reaching recall >= 0.99,
    falling back to the extreme threshold in the direction searched when a
    target is unreachable.
    """
    label_by_pair = {l.pair: l.label for l in labels}
    for h in hypotheses:
        if (h.offset_i, h.offset_j) not in label_by_pair:
            raise ValueError(f"no label for window pair ({h.offset_i}, {h.offset_j})")
    n_pos = sum(1 for l in labels if l.label == "positive")
    ts = sorted(set(int(t) for t in thresholds))

    precision, recall, f1 = [], [], []
    for t in ts:
        tp = fp = 0
        for h in hypotheses:
            if not (h.angular_ok and h.score > t):
                continue
            lab = label_by_pair[(h.offset_i, h.offset_j)]
            if lab == "positive":
                tp += 1
            elif lab == "negative":
                fp += 1
        p = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        r = tp / n_pos if n_pos > 0 else 1.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if (p + r) > 0 else 0.0)

    idx_p = next((k for k, p in enumerate(precision) if p >= 0.99), len(ts) - 1)
    idx_r_candidates = [k for k, r in enumerate(recall) if r >= 0.99]
    idx_r = idx_r_candidates[-1] if idx_r_candidates else 0
    avg_f1 = 0.5 * (f1[idx_p] + f1[idx_r]) if ts else 0.0
    return PRCurve(thresholds=ts, precision=precision, recall=recall, f1=f1, average_f1=avg_f1)


def bench_search(
    map_i: VehicleMap,
    map_j: VehicleMap,
    wl_list,
    sl_list,
    repeats: int,
    base_params: AlignmentParams | None = None,
    workers: int = 1,
    backend: str = "auto",
) -> list[dict]:
    """Wall-clock align_maps over a WL x SL grid; mean/std over repeats.

    Timing covers the correspondence search only (maps are already loaded).
    """
    if len(map_i) == 0 or len(map_j) == 0:
        raise ValueError("benchmark maps must be nonempty")
    base = base_params or AlignmentParams()
    rows = []
    for wl in wl_list:
        for sl in sl_list:
            params = AlignmentParams(
                WL=int(wl),
                SL=int(sl),
                eps_lim=base.eps_lim,
                r_lim=base.r_lim,
                alpha_lim=base.alpha_lim,
                s_lim=base.s_lim,
                sigma_c=base.sigma_c,
                power_iters=base.power_iters,
                power_tol=base.power_tol,
            )
            times = []
            for _ in range(int(repeats)):
                t0 = time.perf_counter()
                align_maps(map_i, map_j, params, workers=workers, backend=backend)
                times.append(time.perf_counter() - t0)
            arr = np.array(times)
            rows.append(
                {
                    "WL": int(wl),
                    "SL": int(sl),
                    "workers": int(workers),
                    "mean_s": float(arr.mean()),
                    "std_s": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                }
            )
    return rows


def write_labels_csv(labels: list[PairLabel], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "iou", "label"])
        for l in labels:
            w.writerow([f"{l.pair[0]}:{l.pair[1]}", repr(l.iou), l.label])


def write_pr_csv(curve: PRCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall", "f1"])
        for t, p, r, f in zip(curve.thresholds, curve.precision, curve.recall, curve.f1):
            w.writerow([t, repr(p), repr(r), repr(f)])


def write_bench_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["WL", "SL", "workers", "mean_s", "std_s"])
        for row in rows:
            w.writerow(
                [row["WL"], row["SL"], row["workers"], repr(row["mean_s"]), repr(row["std_s"])]
            )
