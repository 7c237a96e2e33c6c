import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objmap.geometry import CameraIntrinsics, Pose
from objmap.ingest import Keyframe, SegmentObservation
from objmap.tracking import (
    CandidateTrack,
    Tracker,
    TrackerParams,
    _solve_max_assignment,
    assign,
    feature_score,
    relative_size_difference,
    similarity,
    size_score,
    vio_shift_gate,
)

INTR = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


class TestVioShiftGate:
    def test_exact_mean_passes(self):
        assert vio_shift_gate([0, 0], [10, 0], mu_p=10.0, sigma_p=2.0, v_lim=4.0)

    def test_above_limit_fails(self):
        assert not vio_shift_gate([0, 0], [10.0 + 4.1 * 2.0, 0], 10.0, 2.0, 4.0)

    def test_below_mean_passes(self):
        assert vio_shift_gate([0, 0], [10.0 - 3.9 * 2.0, 0], 10.0, 2.0, 4.0)


class TestSizeScores:
    def test_equal_sizes(self):
        assert relative_size_difference(3.0, 3.0) == 0.0

    def test_one_three(self):
        assert relative_size_difference(1.0, 3.0) == pytest.approx(1.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            relative_size_difference(0.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(
        a=st.floats(0.01, 1e6),
        b=st.floats(0.01, 1e6),
        k=st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, a, b, k):
        assert relative_size_difference(k * a, k * b) == pytest.approx(
            relative_size_difference(a, b), rel=1e-9
        )

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0.01, 1e6), b=st.floats(0.01, 1e6))
    def test_range_and_symmetry(self, a, b):
        r = relative_size_difference(a, b)
        assert 0.0 <= r <= 2.0
        assert r == relative_size_difference(b, a)

    def test_size_score_values(self):
        assert size_score(5.0, 5.0, 0.2) == pytest.approx(2.0, abs=1e-12)
        # r = h_lim/2 -> 1 + cos(pi/2) = 1
        assert size_score(1.0, 1.0 + 2.0 / 19.0, 0.2) == pytest.approx(1.0, rel=1e-9)
        # r exactly at the limit falls outside the branch
        assert size_score(1.0, 3.0, 1.0) == 0.0

    def test_size_score_continuous_to_zero(self):
        h_lim = 0.2
        eps = 1e-7
        h2 = (2 + h_lim - eps) / (2 - h_lim + eps)  # r = h_lim - eps
        assert size_score(1.0, h2, h_lim) < 1e-5

    def test_similarity(self):
        assert similarity(2.0, 0.5) == pytest.approx(1.0)
        assert similarity(0.0, 123.0) == 0.0
        assert similarity(2.0, 1.0) == pytest.approx(math.sqrt(2.0))


def brute_feature_score(A, B, ratio):
    """Independent quadratic-scan ratio-test implementation."""
    A, B = np.asarray(A, float), np.asarray(B, float)
    if len(A) == 0 or len(B) == 0:
        return 1.0
    Q, R = (A, B) if len(A) <= len(B) else (B, A)
    ok = 0
    for q in Q:
        d = sorted(math.dist(q, r) for r in R)
        if len(d) == 1 or (d[1] > 0 and d[0] / d[1] < ratio):
            ok += 1
    return ok / len(Q)


class TestFeatureScore:
    def test_identical_well_separated(self):
        D = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        assert feature_score(D, D, 0.75) == 1.0

    def test_empty_sets(self):
        assert feature_score(None, None, 0.75) == 1.0
        assert feature_score(np.zeros((0, 4)), np.ones((2, 4)), 0.75) == 1.0

    def test_half_pass_construction(self):
        # two unambiguous queries, two ambiguous ones
        A = np.array([[0.0, 0.0], [20.0, 0.0], [50.0, 50.0], [80.0, 80.0]])
        B = np.array(
            [[0.1, 0.0], [20.1, 0.0], [49.0, 50.0], [51.0, 50.0], [79.0, 80.0], [81.0, 80.0]]
        )
        expected = brute_feature_score(A, B, 0.75)
        assert expected == 0.5  # oracle confirms the construction
        assert feature_score(A, B, 0.75) == expected

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            A = rng.normal(size=(rng.integers(1, 8), 4))
            B = rng.normal(size=(rng.integers(1, 8), 4))
            assert feature_score(A, B, 0.8) == pytest.approx(
                brute_feature_score(A, B, 0.8)
            )

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            feature_score(np.zeros((2, 3)), np.zeros((2, 4)), 0.75)


def brute_best_assignment_score(S):
    """Bitmask DP over columns: exact maximum total over partial matchings."""
    r, c = S.shape
    dp = {0: 0.0}
    for i in range(r):
        nxt = dict(dp)
        for mask, tot in dp.items():
            for j in range(c):
                if mask & (1 << j) or not np.isfinite(S[i, j]):
                    continue
                key = mask | (1 << j)
                val = tot + S[i, j]
                if val > nxt.get(key, -math.inf):
                    nxt[key] = val
        dp = nxt
    return max(dp.values())


class TestAssignmentSolver:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            r, c = rng.integers(1, 7), rng.integers(1, 7)
            S = rng.integers(0, 100, size=(r, c)).astype(float)
            S[rng.uniform(size=(r, c)) < 0.35] = -np.inf
            pairs = _solve_max_assignment(S)
            got = sum(S[i, j] for i, j in pairs)
            assert got == brute_best_assignment_score(S)

    def test_never_selects_infeasible(self):
        S = np.array([[-np.inf, -np.inf], [-np.inf, 5.0]])
        pairs = _solve_max_assignment(S)
        assert pairs == [(1, 1)]

    def test_tie_break_prefers_lexicographic(self):
        S = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert _solve_max_assignment(S) == [(0, 0), (1, 1)]

    def test_no_duplicate_rows_or_columns(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            S = rng.uniform(0, 1, size=(rng.integers(2, 8), rng.integers(2, 8)))
            pairs = _solve_max_assignment(S)
            rows = [i for i, _ in pairs]
            cols = [j for _, j in pairs]
            assert len(set(rows)) == len(rows)
            assert len(set(cols)) == len(cols)


def obs_at(centroid, size_px=5.0, descriptors=None):
    return SegmentObservation(
        centroid=np.asarray(centroid, float),
        covariance=size_px * size_px * np.eye(2),
        size_px=size_px,
        pixel_count=80,
        descriptors=descriptors,
    )


def candidate(track_id, centroid, pose, size_px=5.0, mu=10.0, sigma=1.0):
    return CandidateTrack(
        track_id=track_id,
        centroid=np.asarray(centroid, float),
        size_px=size_px,
        descriptors=None,
        pose=pose,
        mu_shift=mu,
        sigma_shift=sigma,
    )


class TestAssign:
    # camera A at origin, camera B shifted +1 m in x, both looking along +z;
    # a point at (0,0,10) projects to (50,50) in A and (40,50) in B.
    pose_a = Pose(np.eye(3), [0.0, 0.0, 0.0])
    pose_b = Pose(np.eye(3), [1.0, 0.0, 0.0])

    def test_single_match(self):
        params = TrackerParams()
        tracks = [candidate(7, [50.0, 50.0], self.pose_a)]
        obs = [obs_at([40.0, 50.0])]
        matches, new = assign(tracks, obs, self.pose_b, INTR, params)
        assert matches == [(7, 0)]
        assert new == []

    def test_epipolar_failure_creates_track(self):
        params = TrackerParams()
        tracks = [candidate(0, [50.0, 50.0], self.pose_a)]
        # displaced far off the (horizontal) epipolar line
        obs = [obs_at([40.0, 90.0])]
        matches, new = assign(tracks, obs, self.pose_b, INTR, params)
        assert matches == []
        assert new == [0]

    def test_vio_gate_failure_creates_track(self):
        params = TrackerParams()
        tracks = [candidate(0, [50.0, 50.0], self.pose_a, mu=50.0, sigma=1.0)]
        obs = [obs_at([40.0, 50.0])]  # shift 10 px, expected 50 +- 4
        matches, new = assign(tracks, obs, self.pose_b, INTR, params)
        assert matches == []
        assert new == [0]

    def test_low_score_discarded_after_solve(self):
        params = TrackerParams()
        # sizes differ by almost the full gate -> score below q_lim
        tracks = [candidate(0, [50.0, 50.0], self.pose_a, size_px=5.0)]
        obs = [obs_at([40.0, 50.0], size_px=5.0 * 1.21)]
        matches, new = assign(tracks, obs, self.pose_b, INTR, params)
        assert matches == []
        assert new == [0]

    def test_two_by_two_prefers_joint_optimum(self):
        params = TrackerParams()
        # two points at z=10: one at image center, one offset in y
        tracks = [
            candidate(0, [50.0, 50.0], self.pose_a, size_px=5.0),
            candidate(1, [50.0, 70.0], self.pose_a, size_px=8.0),
        ]
        obs = [obs_at([40.0, 50.0], size_px=5.0), obs_at([40.0, 70.0], size_px=8.0)]
        matches, new = assign(tracks, obs, self.pose_b, INTR, params)
        assert sorted(matches) == [(0, 0), (1, 1)]
        assert new == []

    def test_empty_inputs(self):
        params = TrackerParams()
        assert assign([], [obs_at([1, 1])], self.pose_b, INTR, params) == ([], [0])
        assert assign([candidate(0, [1, 1], self.pose_a)], [], self.pose_b, INTR, params) == (
            [],
            [],
        )


def nadir_stream(n_steps, visible_steps, step_m=2.0, depth=10.0):
    """Keyframes of a camera sliding +x with one trackable point at depth.

    The point projects with a uniform shift of fx*step/depth px per frame,
    matching the VIO statistics exactly.
    """
    shift = INTR.fx * step_m / depth
    kfs = []
    for k in range(n_steps):
        pose = Pose(np.eye(3), [step_m * k, 0.0, 0.0])
        kf = Keyframe(id=k, timestamp=0.5 * k, pose=pose, mu_p=shift if k else 0.0, sigma_p=1e-3)
        if k in visible_steps:
            u = INTR.fx * (0.0 - step_m * k) / depth + INTR.cx
            if 0 <= u < INTR.width:
                kf.observations.append(obs_at([u, 50.0]))
        kfs.append(kf)
    return kfs


class TestTracker:
    def test_six_frame_track_completed(self):
        tracker = Tracker(INTR, TrackerParams(), min_track_len=5)
        tracks = tracker.run(nadir_stream(6, set(range(6)), step_m=0.5))
        assert len(tracks) == 1
        assert len(tracks[0]) == 6
        assert tracks[0].status == "closed"

    def test_short_track_dropped(self):
        tracker = Tracker(INTR, TrackerParams(), min_track_len=5)
        tracks = tracker.run(nadir_stream(8, {0, 1, 2}, step_m=0.5))
        assert tracks == []

    def test_dropout_within_t_lim_bridged(self):
        # missing for exactly t_lim keyframes, then reappearing
        params = TrackerParams(t_lim=3)
        visible = {0, 1, 2, 5, 6, 7, 8}
        tracker = Tracker(INTR, params, min_track_len=5)
        tracks = tracker.run(nadir_stream(9, visible, step_m=0.5))
        assert len(tracks) == 1
        assert len(tracks[0]) == len(visible)

    def test_dropout_beyond_t_lim_splits(self):
        params = TrackerParams(t_lim=3)
        visible = {0, 1, 2, 3, 4, 9, 10, 11, 12, 13}
        tracker = Tracker(INTR, params, min_track_len=5)
        tracks = tracker.run(nadir_stream(14, visible, step_m=0.2))
        assert len(tracks) == 2

    def test_out_of_order_keyframe_rejected(self):
        tracker = Tracker(INTR, TrackerParams())
        kfs = nadir_stream(2, set(), step_m=0.5)
        tracker.step(kfs[1])
        with pytest.raises(ValueError):
            tracker.step(kfs[0])

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(31)
            kfs = []
            for k in range(10):
                pose = Pose(np.eye(3), [0.5 * k, 0.0, 0.0])
                kf = Keyframe(id=k, timestamp=0.1 * k, pose=pose, mu_p=5.0 if k else 0.0, sigma_p=1.0)
                for base_u in (30.0, 60.0, 90.0):
                    u = base_u - 5.0 * k + rng.normal(0, 0.5)
                    if 0 <= u < 100:
                        kf.observations.append(obs_at([u, 50.0], size_px=5.0 + base_u / 50.0))
                kfs.append(kf)
            tracker = Tracker(INTR, TrackerParams(), min_track_len=3)
            return [(t.id, tuple(t.entries)) for t in tracker.run(kfs)]

        assert run() == run()
