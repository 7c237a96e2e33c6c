"""Frame-to-frame association of segment observations into tracks.

Candidate (track, observation) pairs must pass an epipolar gate and a
VIO-shift gate; survivors are scored by size and appearance similarity and
resolved with an optimal rectangular assignment. Unmatched observations
start new tracks; tracks unseen for more than a staleness window are retired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (
    CameraIntrinsics,
    DegenerateBaselineError,
    Pose,
    epipolar_distance,
)
from .ingest import Keyframe, SegmentObservation

__all__ = [
    "TrackerParams",
    "Track",
    "CandidateTrack",
    "vio_shift_gate",
    "relative_size_difference",
    "size_score",
    "feature_score",
    "similarity",
    "assign",
    "Tracker",
]


@dataclass(frozen=True)
class TrackerParams:
    """Gating and scoring limits for inter-frame association."""

    a_lim: float = 10.0  # epipolar margin, px
    v_lim: float = 4.0  # VIO-shift z-score limit
    q_lim: float = 0.2  # minimum assignment score
    h_lim: float = 0.2  # relative size difference cutoff
    t_lim: int = 3  # staleness window, keyframes
    ratio_test: float = 0.75

    def __post_init__(self):
        if min(self.a_lim, self.v_lim, self.q_lim, self.h_lim, self.t_lim) <= 0:
            raise ValueError("tracker limits must be strictly positive")
        if not 0 < self.ratio_test < 1:
            raise ValueError("ratio_test must be in (0, 1)")


@dataclass
class Track:
    """Chain of observations of one object: (keyframe id, observation index)."""

    id: int
    entries: list[tuple[int, int]] = field(default_factory=list)
    status: str = "active"  # active | stale | closed

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def first_keyframe(self) -> int:
        return self.entries[0][0]

    @property
    def last_keyframe(self) -> int:
        return self.entries[-1][0]


def vio_shift_gate(c_prev, c_curr, mu_p: float, sigma_p: float, v_lim: float) -> bool:
    """Accept when the centroid shift is within v_lim sigmas of the VIO shift."""
    shift = float(np.linalg.norm(np.asarray(c_curr, float) - np.asarray(c_prev, float)))
    return abs(shift - mu_p) / sigma_p < v_lim


def relative_size_difference(h_i: float, h_j: float) -> float:
    """2|h_i - h_j| / (h_i + h_j); scale invariant, in [0, 2]."""
    s = h_i + h_j
    if s <= 0:
        raise ValueError("size descriptors must have a positive sum")
    return 2.0 * abs(h_i - h_j) / s


def size_score(h_i: float, h_j: float, h_lim: float) -> float:
    """Raised-cosine size similarity in [0, 2]; zero at or beyond h_lim."""
    if h_lim <= 0:
        raise ValueError("h_lim must be positive")
    r = relative_size_difference(h_i, h_j)
    if r < h_lim:
        return 1.0 + math.cos(math.pi * r / h_lim)
    return 0.0


def feature_score(desc_a, desc_b, ratio_test: float) -> float:
    """Fraction of the smaller descriptor set surviving the ratio test.

    Empty sets are uninformative and score 1. A lone candidate in the other
    set has no second-nearest competitor and always survives.
    """
    A = None if desc_a is None else np.asarray(desc_a, dtype=float)
    B = None if desc_b is None else np.asarray(desc_b, dtype=float)
    if A is None or B is None or len(A) == 0 or len(B) == 0:
        return 1.0
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"descriptor dimension mismatch: {A.shape[1]} vs {B.shape[1]}"
        )
    if len(A) > len(B):
        A, B = B, A
    # brute-force nearest and second-nearest
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    survivors = 0
    for row in d2:
        if len(row) == 1:
            survivors += 1
            continue
        i1 = int(np.argmin(row))
        d1 = math.sqrt(row[i1])
        row2 = np.delete(row, i1)
        dsecond = math.sqrt(row2.min())
        if dsecond <= 0.0:
            continue  # ambiguous duplicate; eliminated
        if d1 / dsecond < ratio_test:
            survivors += 1
    return survivors / len(A)


def similarity(q_s: float, q_f: float) -> float:
    """Geometric mean of the size and feature scores."""
    return math.sqrt(q_s * q_f)


@dataclass(frozen=True)
class CandidateTrack:
    """Snapshot of a live track as seen by the assignment step."""

    track_id: int
    centroid: np.ndarray
    size_px: float
    descriptors: np.ndarray | None
    pose: Pose  # pose of the track's newest keyframe
    mu_shift: float  # expected pixel shift accumulated over the gap
    sigma_shift: float


def _solve_max_assignment(score: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-weight bipartite matching with -inf entries forbidden.

    Pads the rectangular score matrix with zero-score dummy rows/columns so
    every row and column may stay unmatched; -inf entries can then never
    appear in an optimal solution.
    """
    r, c = score.shape
    M = np.full((r + c, c + r), -np.inf)
    M[:r, :c] = score
    M[np.arange(r), c + np.arange(r)] = 0.0
    M[r + np.arange(c), np.arange(c)] = 0.0
    M[r:, c:] = 0.0
    rows, cols = linear_sum_assignment(M, maximize=True)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if i < r and j < c]
    return _canonicalize_ties(score, pairs)


def _canonicalize_ties(score: np.ndarray, pairs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Deterministic tie-break: prefer the lexicographically lower pairing
    whenever swapping two matched columns leaves the total score unchanged."""
    pairs = sorted(pairs)
    changed = True
    while changed:
        changed = False
        for a in range(len(pairs)):
            for b in range(a + 1, len(pairs)):
                (r1, c1), (r2, c2) = pairs[a], pairs[b]
                if c1 <= c2:
                    continue
                s_alt = score[r1, c2] + score[r2, c1]
                if np.isfinite(s_alt) and s_alt == score[r1, c1] + score[r2, c2]:
                    pairs[a], pairs[b] = (r1, c2), (r2, c1)
                    changed = True
    return pairs


def assign(
    tracks: list[CandidateTrack],
    observations: list[SegmentObservation],
    current_pose: Pose,
    intr: CameraIntrinsics,
    params: TrackerParams,
) -> tuple[list[tuple[int, int]], list[int]]:
    """Match observations to tracks by optimal assignment over gated scores.

    Returns (matches as (track_id, obs_index), unmatched observation indices).
    Pairs failing either gate are infeasible; matched pairs scoring below
    q_lim are discarded after the solve.
    """
    if not tracks or not observations:
        return [], list(range(len(observations)))

    score = np.full((len(tracks), len(observations)), -np.inf)
    for ti, trk in enumerate(tracks):
        for oi, obs in enumerate(observations):
            try:
                epi_ok = (
                    epipolar_distance(trk.pose, current_pose, intr, trk.centroid, obs.centroid)
                    < params.a_lim
                )
            except DegenerateBaselineError:
                epi_ok = True  # pure rotation: constraint undefined, gate passes
            if not epi_ok:
                continue
            if not vio_shift_gate(
                trk.centroid, obs.centroid, trk.mu_shift, trk.sigma_shift, params.v_lim
            ):
                continue
            q_s = size_score(trk.size_px, obs.size_px, params.h_lim)
            q_f = feature_score(trk.descriptors, obs.descriptors, params.ratio_test)
            score[ti, oi] = similarity(q_s, q_f)

    pairs = _solve_max_assignment(score)
    matches = [(tracks[ti].track_id, oi) for ti, oi in pairs if score[ti, oi] >= params.q_lim]
    matched_obs = {oi for _, oi in matches}
    unmatched = [oi for oi in range(len(observations)) if oi not in matched_obs]
    return matches, unmatched


@dataclass
class _LiveTrack:
    track: Track
    last_step: int
    centroid: np.ndarray
    size_px: float
    descriptors: np.ndarray | None
    pose: Pose


class Tracker:
    """Stateful multi-object tracker over a keyframe stream.

    Tracks unseen for more than t_lim keyframes are retired; retired tracks
    with at least ``min_track_len`` entries are queued on ``completed`` for
    reconstruction, shorter ones are dropped.
    """

    def __init__(
        self,
        intrinsics: CameraIntrinsics,
        params: TrackerParams | None = None,
        min_track_len: int = 5,
    ):
        self.intrinsics = intrinsics
        self.params = params or TrackerParams()
        self.min_track_len = min_track_len
        self.completed: list[Track] = []
        self._live: list[_LiveTrack] = []
        self._next_id = 0
        self._step = -1
        self._last_kf_id: int | None = None
        self._shift_stats: dict[int, tuple[float, float]] = {}  # step -> (mu_p, sigma_p)

    @property
    def active_tracks(self) -> list[Track]:
        return [lt.track for lt in self._live]

    def _retire(self, lt: _LiveTrack) -> None:
        if len(lt.track) >= self.min_track_len:
            lt.track.status = "closed"
            self.completed.append(lt.track)

    def step(self, keyframe: Keyframe) -> None:
        """Ingest one keyframe: gate, score, assign, and update track state."""
        if self._last_kf_id is not None and keyframe.id <= self._last_kf_id:
            raise ValueError(
                f"keyframe ids must increase: got {keyframe.id} after {self._last_kf_id}"
            )
        self._last_kf_id = keyframe.id
        self._step += 1
        step = self._step
        self._shift_stats[step] = (keyframe.mu_p, keyframe.sigma_p)
        self._shift_stats.pop(step - self.params.t_lim - 1, None)

        eligible: list[_LiveTrack] = []
        keep: list[_LiveTrack] = []
        for lt in self._live:
            if step - lt.last_step > self.params.t_lim:
                lt.track.status = "stale"
                self._retire(lt)
            else:
                keep.append(lt)
                eligible.append(lt)
        self._live = keep

        candidates = []
        for lt in eligible:
            # accumulate expected shift over the (possibly multi-frame) gap
            mu = 0.0
            var = 0.0
            for s in range(lt.last_step + 1, step + 1):
                m, sd = self._shift_stats[s]
                mu += m
                var += sd * sd
            candidates.append(
                CandidateTrack(
                    track_id=lt.track.id,
                    centroid=lt.centroid,
                    size_px=lt.size_px,
                    descriptors=lt.descriptors,
                    pose=lt.pose,
                    mu_shift=mu,
                    sigma_shift=max(math.sqrt(var), 1e-3),
                )
            )

        matches, unmatched = assign(
            candidates, keyframe.observations, keyframe.pose, self.intrinsics, self.params
        )

        by_id = {lt.track.id: lt for lt in self._live}
        for track_id, oi in matches:
            lt = by_id[track_id]
            obs = keyframe.observations[oi]
            lt.track.entries.append((keyframe.id, oi))
            lt.last_step = step
            lt.centroid = obs.centroid
            lt.size_px = obs.size_px
            lt.descriptors = obs.descriptors
            lt.pose = keyframe.pose

        for oi in unmatched:
            obs = keyframe.observations[oi]
            track = Track(id=self._next_id, entries=[(keyframe.id, oi)])
            self._next_id += 1
            self._live.append(
                _LiveTrack(
                    track=track,
                    last_step=step,
                    centroid=obs.centroid,
                    size_px=obs.size_px,
                    descriptors=obs.descriptors,
                    pose=keyframe.pose,
                )
            )

    def finish(self) -> list[Track]:
        """Flush remaining live tracks and return all completed tracks
        ordered by creation (track id)."""
        for lt in self._live:
            lt.track.status = "stale"
            self._retire(lt)
        self._live = []
        self.completed.sort(key=lambda t: t.id)
        return self.completed

    def run(self, keyframes) -> list[Track]:
        for kf in keyframes:
            self.step(kf)
        return self.finish()
