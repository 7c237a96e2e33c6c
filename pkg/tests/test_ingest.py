import math

import numpy as np
import pytest

from objmap.geometry import CameraIntrinsics, Pose, rot_z
from objmap.ingest import (
    FlightLog,
    InvariantViolation,
    Keyframe,
    LogParseError,
    SegmentObservation,
    gate_keyframes,
    load_flight_log,
    rle_decode,
    save_flight_log,
    summarize_mask,
)


def make_intr():
    return CameraIntrinsics(fx=400.0, fy=400.0, cx=200.0, cy=150.0, width=400, height=300)


class TestSummarizeMask:
    def test_two_pixel_mask_rejected(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 0] = mask[0, 1] = True
        assert summarize_mask(mask) is None

    def test_horizontal_strip(self):
        mask = np.zeros((3, 5), dtype=bool)
        mask[0, 0:3] = True  # pixels (0,0),(1,0),(2,0)
        obs = summarize_mask(mask)
        assert np.allclose(obs.centroid, [1.0, 0.0])
        assert obs.covariance[0, 0] == pytest.approx(2.0 / 3.0)
        assert obs.size_px == pytest.approx(math.sqrt(2.0 / 3.0))
        assert obs.pixel_count == 3

    def test_rotation_invariance_of_size(self):
        rng = np.random.default_rng(0)
        mask = rng.uniform(size=(12, 12)) < 0.4
        mask[0, 0] = mask[0, 1] = mask[1, 0] = True
        a = summarize_mask(mask)
        b = summarize_mask(np.rot90(mask))
        assert a.size_px == pytest.approx(b.size_px, abs=1e-9)

    def test_translation_invariance_of_size(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:5, 3:6] = True
        a = summarize_mask(mask)
        b = summarize_mask(mask, origin=(100, 40))
        assert a.size_px == pytest.approx(b.size_px, abs=1e-12)
        assert np.allclose(b.centroid - a.centroid, [100, 40])

    def test_rle_round_trip(self):
        mask = np.zeros((4, 6), dtype=bool)
        mask[1, 2:5] = True
        mask[2, 0:2] = True
        flat = mask.ravel()
        runs = []
        val = False
        count = 0
        for v in flat:
            if v == val:
                count += 1
            else:
                runs.append(count)
                val = v
                count = 1
        runs.append(count)
        assert np.array_equal(rle_decode(runs, 6, 4), mask)

    def test_rle_length_mismatch(self):
        with pytest.raises(ValueError):
            rle_decode([3, 2], 4, 4)


class TestObservationInvariants:
    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(InvariantViolation):
            SegmentObservation(
                centroid=[0, 0],
                covariance=[[1.0, 2.0], [2.0, 1.0]],
                size_px=math.sqrt(3.0),
                pixel_count=10,
            )

    def test_size_mismatch_rejected(self):
        with pytest.raises(InvariantViolation):
            SegmentObservation(
                centroid=[0, 0], covariance=np.eye(2), size_px=2.0, pixel_count=10
            )

    def test_small_pixel_count_rejected(self):
        with pytest.raises(InvariantViolation):
            SegmentObservation(
                centroid=[0, 0], covariance=np.eye(2), size_px=1.0, pixel_count=2
            )

    def test_sigma_p_clamped(self):
        kf = Keyframe(id=0, timestamp=0.0, pose=Pose(np.eye(3), np.zeros(3)), mu_p=0.0, sigma_p=0.0)
        assert kf.sigma_p == pytest.approx(1e-3)


class TestGateKeyframes:
    def test_regular_spacing(self):
        pos = [[x, 0.0, 0.0] for x in range(5)]
        assert gate_keyframes(pos, 2.0) == [0, 2, 4]

    def test_stationary(self):
        pos = [[0.0, 0.0, 0.0]] * 10
        assert gate_keyframes(pos, 2.0) == [0]

    def test_spacing_invariant(self):
        rng = np.random.default_rng(7)
        pos = np.cumsum(rng.uniform(0, 1.5, (100, 3)), axis=0)
        kept = gate_keyframes(pos, 2.0)
        for a, b in zip(kept, kept[1:]):
            assert np.linalg.norm(pos[b] - pos[a]) >= 2.0


def build_log(with_descriptors=False):
    intr = make_intr()
    log = FlightLog(intrinsics=intr, descriptor_dim=3 if with_descriptors else 0)
    log.meta["source"] = "unit test"
    rng = np.random.default_rng(11)
    for k in range(3):
        pose = Pose(rot_z(10.0 * k), [2.0 * k, 0.0, 50.0])
        kf = Keyframe(id=k, timestamp=0.25 * k, pose=pose, mu_p=16.0, sigma_p=2.5)
        for _ in range(2):
            size = rng.uniform(2, 9)
            desc = rng.normal(size=(4, 3)) if with_descriptors else None
            kf.observations.append(
                SegmentObservation(
                    centroid=rng.uniform(0, 300, 2),
                    covariance=size * size * np.eye(2),
                    size_px=size,
                    pixel_count=60,
                    descriptors=desc,
                )
            )
        log.keyframes.append(kf)
    return log


class TestLogRoundTrip:
    def test_load_well_formed(self, tmp_path):
        path = tmp_path / "f.obs"
        save_flight_log(build_log(), path)
        log = load_flight_log(path)
        assert len(log.keyframes) == 3
        assert all(len(kf.observations) == 2 for kf in log.keyframes)
        assert log.meta["source"] == "unit test"

    def test_bit_identical_round_trip(self, tmp_path):
        p1, p2 = tmp_path / "a.obs", tmp_path / "b.obs"
        save_flight_log(build_log(with_descriptors=True), p1)
        save_flight_log(load_flight_log(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_survive(self, tmp_path):
        path = tmp_path / "f.obs"
        orig = build_log(with_descriptors=True)
        save_flight_log(orig, path)
        log = load_flight_log(path)
        for kf0, kf1 in zip(orig.keyframes, log.keyframes):
            assert kf0.timestamp == kf1.timestamp
            assert np.array_equal(kf0.pose.translation, kf1.pose.translation)
            assert np.abs(kf0.pose.rotation - kf1.pose.rotation).max() < 1e-12
            for o0, o1 in zip(kf0.observations, kf1.observations):
                assert np.array_equal(o0.centroid, o1.centroid)
                assert np.array_equal(o0.covariance, o1.covariance)
                assert np.array_equal(o0.descriptors, o1.descriptors)

    def test_mask_records_ingested(self, tmp_path):
        path = tmp_path / "m.obs"
        intr = make_intr()
        lines = [
            "objlog 1 fx=400.0 fy=400.0 cx=200.0 cy=150.0 width=400 height=300 desc_dim=0 frame=odom",
            "keyframe id=0 t=0.0 q=1.0,0.0,0.0,0.0 p=0.0,0.0,50.0 mu_p=0.0 sigma_p=1.0",
            # 3x1 strip of ones in a 5x2 window at offset (10, 20)
            "mask kf=0 x0=10 y0=20 w=5 h=2 rle=0,3,7",
            # too-small mask: silently dropped
            "mask kf=0 x0=0 y0=0 w=4 h=1 rle=1,2,1",
        ]
        path.write_text("\n".join(lines) + "\n")
        log = load_flight_log(path)
        assert len(log.keyframes[0].observations) == 1
        obs = log.keyframes[0].observations[0]
        assert np.allclose(obs.centroid, [11.0, 20.0])
        assert obs.size_px == pytest.approx(math.sqrt(2.0 / 3.0))


class TestLogErrors:
    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.obs"
        path.write_text(
            "objlog 1 fx=1.0 fy=1.0 cx=0.0 cy=0.0 width=10 height=10 desc_dim=0 frame=o\n"
            "keyframe id=0 t=0.0 q=1.0,0.0,0.0,0.0 p=0.0,0.0,1.0 mu_p=0.0 sigma_p=1.0\n"
            "obs kf=0 c=notanumber,2 cov=1.0,0.0,1.0 n=5\n"
        )
        with pytest.raises(LogParseError) as ei:
            load_flight_log(path)
        assert "line 3" in str(ei.value)

    def test_negative_covariance_rejected(self, tmp_path):
        path = tmp_path / "bad.obs"
        path.write_text(
            "objlog 1 fx=1.0 fy=1.0 cx=0.0 cy=0.0 width=10 height=10 desc_dim=0 frame=o\n"
            "keyframe id=0 t=0.0 q=1.0,0.0,0.0,0.0 p=0.0,0.0,1.0 mu_p=0.0 sigma_p=1.0\n"
            "obs kf=0 c=1.0,2.0 cov=1.0,2.0,1.0 n=5\n"
        )
        with pytest.raises(InvariantViolation) as ei:
            load_flight_log(path)
        assert "covariance" in str(ei.value)

    def test_decreasing_keyframe_ids_rejected(self, tmp_path):
        path = tmp_path / "bad.obs"
        path.write_text(
            "objlog 1 fx=1.0 fy=1.0 cx=0.0 cy=0.0 width=10 height=10 desc_dim=0 frame=o\n"
            "keyframe id=5 t=0.0 q=1.0,0.0,0.0,0.0 p=0.0,0.0,1.0 mu_p=0.0 sigma_p=1.0\n"
            "keyframe id=4 t=1.0 q=1.0,0.0,0.0,0.0 p=2.0,0.0,1.0 mu_p=0.0 sigma_p=1.0\n"
        )
        with pytest.raises(InvariantViolation):
            load_flight_log(path)

    def test_bad_quaternion_rejected(self, tmp_path):
        path = tmp_path / "bad.obs"
        path.write_text(
            "objlog 1 fx=1.0 fy=1.0 cx=0.0 cy=0.0 width=10 height=10 desc_dim=0 frame=o\n"
            "keyframe id=0 t=0.0 q=2.0,0.0,0.0,0.0 p=0.0,0.0,1.0 mu_p=0.0 sigma_p=1.0\n"
        )
        with pytest.raises(InvariantViolation):
            load_flight_log(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.obs"
        path.write_text("wrongmagic 1\n")
        with pytest.raises(LogParseError):
            load_flight_log(path)
