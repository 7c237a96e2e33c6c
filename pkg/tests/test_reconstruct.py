import math

import numpy as np
import pytest

from objmap.config import PipelineConfig
from objmap.geometry import CameraIntrinsics, Pose, rot_x, rot_z
from objmap.ingest import FlightLog, Keyframe, SegmentObservation
from objmap.reconstruct import (
    MapObject,
    ReconstructionParams,
    VehicleMap,
    build_map,
    metric_size,
    reprojection_cost,
    triangulate_track,
)
from objmap.simulate import camera_pose
from objmap.tracking import Track

INTR = CameraIntrinsics(fx=400.0, fy=400.0, cx=200.0, cy=150.0, width=400, height=300)
PARAMS = ReconstructionParams()


def nadir_track(target, xs, altitude=50.0, rng=None, sigma=0.0):
    """Poses sliding along +x with a nadir camera, plus exact or noisy pixels."""
    poses, centroids = [], []
    for x in xs:
        pose = camera_pose([x, 0.0, altitude], heading_deg=0.0, pitch_deg=-90.0)
        cam = pose.rotation.T @ (np.asarray(target, float) - pose.translation)
        px = np.array([INTR.fx * cam[0] / cam[2] + INTR.cx, INTR.fy * cam[1] / cam[2] + INTR.cy])
        if rng is not None and sigma > 0:
            px = px + rng.normal(0, sigma, 2)
        poses.append(pose)
        centroids.append(px)
    return np.array(centroids), poses


class TestTriangulate:
    def test_noiseless_recovery(self):
        target = np.array([3.0, -2.0, 0.0])
        centroids, poses = nadir_track(target, np.linspace(-20, 20, 5))
        est = triangulate_track(centroids, poses, INTR, PARAMS)
        assert est is not None
        assert np.linalg.norm(est - target) < 1e-6

    def test_low_parallax_diverges(self):
        # camera translating along the optical axis toward the point
        target = np.array([0.0, 0.0, 0.0])
        poses = [Pose(rot_x(180.0), [0.0, 0.0, z]) for z in (100.0, 90.0, 80.0, 70.0, 60.0)]
        centroids = []
        for pose in poses:
            cam = pose.rotation.T @ (target - pose.translation)
            centroids.append(
                [INTR.fx * cam[0] / cam[2] + INTR.cx, INTR.fy * cam[1] / cam[2] + INTR.cy]
            )
        assert triangulate_track(np.array(centroids), poses, INTR, PARAMS) is None

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            target = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
            centroids, poses = nadir_track(target, np.sort(rng.uniform(-25, 25, 6)), rng=rng, sigma=2.0)
            point = target + rng.normal(0, 1.0, 3)
            ev = reprojection_cost(point, centroids, poses, INTR, 3.0)
            assert ev is not None
            cost, grad = ev
            fd = np.zeros(3)
            h = 1e-6
            for ax in range(3):
                e = np.zeros(3)
                e[ax] = h
                up = reprojection_cost(point + e, centroids, poses, INTR, 3.0)[0]
                dn = reprojection_cost(point - e, centroids, poses, INTR, 3.0)[0]
                fd[ax] = (up - dn) / (2 * h)
            assert np.linalg.norm(grad - fd) <= 1e-4 * (1.0 + np.linalg.norm(fd))

    def test_gradient_small_at_optimum(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            target = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
            centroids, poses = nadir_track(
                target, np.linspace(-20, 20, 8), rng=rng, sigma=1.0
            )
            est = triangulate_track(centroids, poses, INTR, PARAMS)
            assert est is not None
            cost, grad = reprojection_cost(est, centroids, poses, INTR, PARAMS.sigma_px)
            assert np.linalg.norm(grad) < 1e-6 * (1.0 + cost)

    def test_monte_carlo_error_within_covariance_bound(self):
        # first-order covariance: (J^T J)^-1 with J evaluated at the truth
        rng = np.random.default_rng(99)
        target = np.array([0.0, 0.0, 0.0])
        xs = np.linspace(-18, 18, 10)
        sigma = 1.0
        clean, poses = nadir_track(target, xs)
        from objmap.reconstruct import _residuals_jacobian

        _, J = _residuals_jacobian(target, clean, poses, INTR, sigma)
        cov = np.linalg.inv(J.T @ J)
        pred_std = np.sqrt(np.diag(cov))
        params = ReconstructionParams(sigma_px=sigma)
        errs = []
        for _ in range(1000):
            noisy = clean + rng.normal(0, sigma, clean.shape)
            est = triangulate_track(noisy, poses, INTR, params)
            assert est is not None
            errs.append(est - target)
        rmse = np.sqrt(np.mean(np.square(errs), axis=0))
        assert np.all(rmse <= 3.0 * pred_std)
        assert np.all(rmse >= pred_std / 3.0)

    def test_too_short_track_rejected(self):
        centroids, poses = nadir_track([0, 0, 0], np.linspace(-10, 10, 3))
        with pytest.raises(ValueError):
            triangulate_track(centroids, poses, INTR, PARAMS)


class TestMetricSize:
    def test_exact_inversion(self):
        # size_px = f * s / depth at every frame recovers s exactly
        s = 2.5
        poses = [camera_pose([x, 0, 50.0], 0.0, -90.0) for x in (-10.0, 0.0, 10.0)]
        position = np.array([0.0, 0.0, 0.0])
        sizes_px = []
        for pose in poses:
            depth = (pose.rotation.T @ (position - pose.translation))[2]
            sizes_px.append(400.0 * s / depth)
        assert metric_size(np.array(sizes_px), position, poses, INTR) == pytest.approx(s)

    def test_depth_linearity(self):
        poses_lo = [camera_pose([x, 0, 50.0], 0.0, -90.0) for x in (-5.0, 5.0)]
        poses_hi = [camera_pose([x, 0, 100.0], 0.0, -90.0) for x in (-5.0, 5.0)]
        position = np.array([0.0, 0.0, 0.0])
        sizes = np.array([8.0, 8.0])
        lo = metric_size(sizes, position, poses_lo, INTR)
        hi = metric_size(sizes, position, poses_hi, INTR)
        assert hi == pytest.approx(2.0 * lo, rel=1e-9)

    def test_behind_camera_excluded(self):
        above = camera_pose([0, 0, 50.0], 0.0, -90.0)
        looking_away = Pose(np.eye(3), [0.0, 0.0, 50.0])  # +z, away from ground
        position = np.array([0.0, 0.0, 0.0])
        only_valid = metric_size(np.array([8.0, 8.0]), position, [above, looking_away], INTR)
        assert only_valid == pytest.approx(8.0 * 50.0 / 400.0)
        assert metric_size(np.array([8.0]), position, [looking_away], INTR) is None


def synth_log_and_tracks(n_objects=8, n_obs=6, seed=0):
    rng = np.random.default_rng(seed)
    targets = np.column_stack(
        [rng.uniform(-30, 30, n_objects), rng.uniform(-10, 10, n_objects), np.zeros(n_objects)]
    )
    log = FlightLog(intrinsics=INTR)
    xs = np.linspace(-25, 25, n_obs)
    tracks = []
    for k, x in enumerate(xs):
        pose = camera_pose([x, 0, 50.0], 0.0, -90.0)
        kf = Keyframe(id=k, timestamp=float(k), pose=pose, mu_p=0.0, sigma_p=1.0)
        log.keyframes.append(kf)
    for n in range(n_objects):
        entries = []
        for k in range(n_obs):
            pose = log.keyframes[k].pose
            cam = pose.rotation.T @ (targets[n] - pose.translation)
            px = [INTR.fx * cam[0] / cam[2] + INTR.cx, INTR.fy * cam[1] / cam[2] + INTR.cy]
            size_px = 400.0 * 2.0 / cam[2]
            kf = log.keyframes[k]
            entries.append((k, len(kf.observations)))
            kf.observations.append(
                SegmentObservation(
                    centroid=px,
                    covariance=size_px**2 * np.eye(2),
                    size_px=size_px,
                    pixel_count=50,
                )
            )
        tracks.append(Track(id=n, entries=entries, status="closed"))
    return log, tracks, targets


class TestBuildMap:
    def test_empty(self):
        log = FlightLog(intrinsics=INTR)
        vmap = build_map([], log, PARAMS)
        assert len(vmap) == 0

    def test_noiseless_round_trip(self):
        log, tracks, targets = synth_log_and_tracks()
        vmap = build_map(tracks, log, PARAMS)
        assert len(vmap) == len(targets)
        assert np.abs(vmap.positions() - targets).max() < 1e-6
        assert np.allclose(vmap.sizes(), 2.0, atol=1e-9)

    def test_short_tracks_excluded(self):
        log, tracks, _ = synth_log_and_tracks()
        tracks[0] = Track(id=0, entries=tracks[0].entries[:4], status="closed")
        vmap = build_map(tracks, log, PARAMS)
        assert len(vmap) == len(tracks) - 1

    def test_creation_order_preserved(self):
        log, tracks, _ = synth_log_and_tracks()
        vmap = build_map(list(reversed(tracks)), log, PARAMS)
        firsts = [o.source_keyframes[0] for o in vmap.objects]
        assert firsts == sorted(firsts)

    def test_params_hash_tracks_params(self):
        log, tracks, _ = synth_log_and_tracks()
        a = build_map(tracks, log, ReconstructionParams())
        b = build_map(tracks, log, ReconstructionParams(sigma_px=1.0))
        assert a.params_hash != b.params_hash

    def test_map_object_validation(self):
        with pytest.raises(ValueError):
            MapObject(position=[0, 0, 0], size_m=0.0, track_len=5, source_keyframes=(0, 4))
        vm = VehicleMap(
            objects=[
                MapObject(position=[0, 0, 0], size_m=1.0, track_len=5, source_keyframes=(9, 12)),
                MapObject(position=[1, 0, 0], size_m=1.0, track_len=5, source_keyframes=(3, 8)),
            ]
        )
        with pytest.raises(ValueError):
            vm.validate()
