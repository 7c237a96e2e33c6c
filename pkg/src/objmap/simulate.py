"""Synthetic worlds, flights, and observation logs with full ground truth.

Objects are discs on the ground plane z = 0 inside a rectangular region. A
flight follows piecewise-linear waypoints; keyframes are placed at a fixed
arc-length spacing with the camera yawed along the path and pitched toward
the ground (nadir = -90 deg). Everything is driven by seeded generators, so
(world seed, flight seed, params) reproduce logs bit for bit.

VIO shift statistics are obtained by projecting a virtual lattice of ground
points into consecutive keyframes; lattice projections receive the same
centroid pixel noise as object observations, standing in for the tracking
noise of a real front end (with exact projections the shift spread collapses
and the shift gate would reject every noisy observation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import (
    CameraIntrinsics,
    Pose,
    quaternion_from_rotation,
    rot_x,
    rot_z,
)
from .ingest import FlightLog, Keyframe, SegmentObservation
from .reconstruct import MapObject, VehicleMap

__all__ = [
    "SimWorld",
    "FlightSpec",
    "NoiseModel",
    "SeasonModel",
    "GroundTruth",
    "generate_world",
    "perturb_season",
    "simulate_flight",
    "lawnmower_waypoints",
    "camera_pose",
    "synthetic_map",
    "save_ground_truth",
    "load_ground_truth",
]

GT_MAGIC = "objgt"
GT_VERSION = 1

# heading +X, level flight: columns are image-right, image-down, optical axis
_R0 = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class SimWorld:
    """Scattered ground objects with stable identities."""

    positions: np.ndarray  # (n,3), z = 0
    extents: np.ndarray  # (n,) m
    stable_ids: np.ndarray  # (n,) int
    region: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    seed: int
    extent_range: tuple[float, float] = (0.5, 4.0)

    def __len__(self) -> int:
        return len(self.extents)


@dataclass(frozen=True)
class FlightSpec:
    """Waypoint path and camera configuration for one traverse."""

    waypoints: np.ndarray  # (k,3) m
    speed: float = 8.0  # m/s
    camera_pitch: float = -90.0  # deg, nadir = -90
    keyframe_spacing: float = 2.0  # m

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "waypoints", wp)
        if len(wp) < 2:
            raise ValueError("need at least 2 waypoints")
        if self.keyframe_spacing <= 0 or self.speed <= 0:
            raise ValueError("spacing and speed must be positive")


@dataclass(frozen=True)
class NoiseModel:
    centroid_sigma: float = 0.0  # px
    detection_prob: float = 1.0
    size_jitter: float = 0.0  # lognormal sigma on size_px
    odom_drift_sigma: float = 0.0  # m of drift per m traveled
    odom_rot_drift_sigma: float = 0.0  # deg per m traveled
    descriptor_dim: int = 0  # 0 disables appearance descriptors
    descriptor_count: int = 0
    descriptor_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection_prob must be in [0, 1]")
        if min(
            self.centroid_sigma,
            self.size_jitter,
            self.odom_drift_sigma,
            self.odom_rot_drift_sigma,
        ) < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class SeasonModel:
    """Appearance change between traverses: dropout, size drift, new objects."""

    dropout_frac: float = 0.0
    size_scale_sigma: float = 0.0
    spawn_frac: float = 0.0

    def __post_init__(self):
        if not (0 <= self.dropout_frac <= 1 and 0 <= self.spawn_frac <= 1):
            raise ValueError("fractions must be in [0, 1]")
        if self.size_scale_sigma < 0:
            raise ValueError("size_scale_sigma must be non-negative")


@dataclass
class GroundTruth:
    """Evaluation-only truth for one simulated flight."""

    true_poses: list[Pose]
    obs_ids: dict[tuple[int, int], int]  # (keyframe id, obs index) -> stable id
    object_ids: np.ndarray
    object_positions: np.ndarray
    object_extents: np.ndarray
    intrinsics: CameraIntrinsics
    ground_z: float = 0.0


def generate_world(
    seed: int,
    density: float,
    region: tuple[float, float, float, float],
    extent_range: tuple[float, float] = (0.5, 4.0),
) -> SimWorld:
    """Uniform scatter of round(density * area) objects with uniform extents."""
    xmin, ymin, xmax, ymax = region
    area = (xmax - xmin) * (ymax - ymin)
    if density <= 0 or area <= 0:
        raise ValueError("density and region area must be positive")
    n = int(round(density * area))
    rng = np.random.default_rng(seed)
    xs = rng.uniform(xmin, xmax, n)
    ys = rng.uniform(ymin, ymax, n)
    extents = rng.uniform(extent_range[0], extent_range[1], n)
    return SimWorld(
        positions=np.column_stack([xs, ys, np.zeros(n)]),
        extents=extents,
        stable_ids=np.arange(n, dtype=np.int64),
        region=region,
        seed=seed,
        extent_range=extent_range,
    )


def perturb_season(world: SimWorld, season: SeasonModel, seed: int) -> SimWorld:
    """Seasonal twin of a world: seeded dropout, size rescale, and spawns."""
    rng = np.random.default_rng(seed)
    n = len(world)
    n_drop = int(round(season.dropout_frac * n))
    drop = set(rng.choice(n, size=n_drop, replace=False).tolist()) if n_drop else set()
    keep = np.array([i for i in range(n) if i not in drop], dtype=int)
    positions = world.positions[keep]
    extents = world.extents[keep] * rng.lognormal(0.0, season.size_scale_sigma, len(keep))
    ids = world.stable_ids[keep]

    n_spawn = int(round(season.spawn_frac * n))
    if n_spawn:
        xmin, ymin, xmax, ymax = world.region
        xs = rng.uniform(xmin, xmax, n_spawn)
        ys = rng.uniform(ymin, ymax, n_spawn)
        positions = np.vstack([positions, np.column_stack([xs, ys, np.zeros(n_spawn)])])
        extents = np.concatenate(
            [extents, rng.uniform(world.extent_range[0], world.extent_range[1], n_spawn)]
        )
        next_id = int(world.stable_ids.max()) + 1 if n else 0
        ids = np.concatenate([ids, np.arange(next_id, next_id + n_spawn, dtype=np.int64)])
    return replace(world, positions=positions, extents=extents, stable_ids=ids)


def camera_pose(position, heading_deg: float, pitch_deg: float, frame_id: str = "odom") -> Pose:
    """Pose of a camera at ``position`` yawed to ``heading_deg`` (from +X) and
    pitched toward the ground (nadir = -90)."""
    R = rot_z(heading_deg) @ _R0 @ rot_x(pitch_deg)
    return Pose(R, np.asarray(position, dtype=float), frame_id)


def lawnmower_waypoints(
    region: tuple[float, float, float, float],
    altitude: float,
    line_spacing: float,
    n_lines: int | None = None,
    margin: float = 0.0,
) -> np.ndarray:
    """Back-and-forth survey lines over a region at constant altitude."""
    xmin, ymin, xmax, ymax = region
    x0, x1 = xmin + margin, xmax - margin
    y = ymin + margin
    y_max = ymax - margin
    pts = []
    line = 0
    while y <= y_max and (n_lines is None or line < n_lines):
        if line % 2 == 0:
            pts.append([x0, y, altitude])
            pts.append([x1, y, altitude])
        else:
            pts.append([x1, y, altitude])
            pts.append([x0, y, altitude])
        y += line_spacing
        line += 1
    return np.array(pts)


def _path_samples(waypoints: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(positions, headings deg, arc lengths) at a fixed arc-length spacing."""
    deltas = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    if np.any(seg_len <= 0):
        raise ValueError("degenerate (zero-length) path segment")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s_vals = np.arange(0.0, total + 1e-9, spacing)
    pos = np.empty((len(s_vals), 3))
    head = np.empty(len(s_vals))
    for k, s in enumerate(s_vals):
        i = int(np.searchsorted(cum[1:], s, side="right"))
        i = min(i, len(seg_len) - 1)
        frac = (s - cum[i]) / seg_len[i]
        pos[k] = waypoints[i] + frac * deltas[i]
        head[k] = math.degrees(math.atan2(deltas[i][1], deltas[i][0]))
    return pos, head, s_vals


def _drift_rotation(rng, sigma_deg: float) -> np.ndarray:
    if sigma_deg <= 0:
        return np.eye(3)
    rotvec = np.radians(rng.normal(0.0, sigma_deg, 3))
    angle = np.linalg.norm(rotvec)
    if angle < 1e-15:
        return np.eye(3)
    k = rotvec / angle
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def _project_batch(
    pose: Pose, intr: CameraIntrinsics, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixels, in-image mask, and depths for an (n,3) batch of world points."""
    cam = (points - pose.translation) @ pose.rotation
    z = cam[:, 2]
    safe = np.where(z > 1e-6, z, 1.0)
    u = intr.fx * cam[:, 0] / safe + intr.cx
    v = intr.fy * cam[:, 1] / safe + intr.cy
    ok = (z > 1e-6) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return np.column_stack([u, v]), ok, z


def _vio_shift_stats(
    pose_prev: Pose,
    pose_curr: Pose,
    intr: CameraIntrinsics,
    ground_z: float,
    noise_sigma: float,
    rng,
    grid: int = 10,
) -> tuple[float, float]:
    """Mean/std pixel shift of a virtual ground lattice between two keyframes."""
    c = 0.5 * (pose_prev.translation + pose_curr.translation)
    h = max(c[2] - ground_z, 1.0)
    half_x = 0.7 * h * intr.width / intr.fx
    half_y = 0.7 * h * intr.height / intr.fy
    xs = np.linspace(c[0] - half_x, c[0] + half_x, grid)
    ys = np.linspace(c[1] - half_y, c[1] + half_y, grid)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, ground_z)])

    pa, ok_a, _ = _project_batch(pose_prev, intr, pts)
    pb, ok_b, _ = _project_batch(pose_curr, intr, pts)
    both = ok_a & ok_b
    n = int(both.sum())
    if n < 2:
        return 0.0, 1e-3
    pa, pb = pa[both], pb[both]
    if noise_sigma > 0:
        pa = pa + rng.normal(0.0, noise_sigma, pa.shape)
        pb = pb + rng.normal(0.0, noise_sigma, pb.shape)
    shifts = np.linalg.norm(pb - pa, axis=1)
    return float(shifts.mean()), float(max(shifts.std(), 1e-3))


def simulate_flight(
    world: SimWorld,
    spec: FlightSpec,
    noise: NoiseModel,
    intr: CameraIntrinsics,
    seed: int,
) -> tuple[FlightLog, GroundTruth]:
    """Fly the spec over the world and emit a noisy observation log plus truth."""
    if spec.waypoints[:, 2].min() <= world.positions[:, 2].max():
        raise ValueError("flight altitude must stay above all objects")
    rng = np.random.default_rng(seed)
    pos, head, s_vals = _path_samples(spec.waypoints, spec.keyframe_spacing)
    f_mean = 0.5 * (intr.fx + intr.fy)

    base_desc = None
    if noise.descriptor_dim > 0 and noise.descriptor_count > 0:
        drng = np.random.default_rng(world.seed ^ 0x5EED)
        base_desc = drng.normal(
            0.0, 1.0, (len(world), noise.descriptor_count, noise.descriptor_dim)
        )

    log = FlightLog(
        intrinsics=intr,
        descriptor_dim=noise.descriptor_dim,
        frame_id="odom",
        meta={"world_seed": str(world.seed), "flight_seed": str(seed)},
    )
    gt = GroundTruth(
        true_poses=[],
        obs_ids={},
        object_ids=world.stable_ids.copy(),
        object_positions=world.positions.copy(),
        object_extents=world.extents.copy(),
        intrinsics=intr,
        ground_z=0.0,
    )

    drift_R = np.eye(3)
    drift_t = np.zeros(3)
    prev_true: Pose | None = None
    any_visible = False

    for k in range(len(pos)):
        true_pose = camera_pose(pos[k], head[k], spec.camera_pitch)
        gt.true_poses.append(true_pose)

        if k > 0:
            ds = s_vals[k] - s_vals[k - 1]
            if noise.odom_drift_sigma > 0:
                drift_t = drift_t + rng.normal(0.0, noise.odom_drift_sigma * ds, 3)
            if noise.odom_rot_drift_sigma > 0:
                drift_R = _drift_rotation(rng, noise.odom_rot_drift_sigma * ds) @ drift_R
        odo_pose = Pose(drift_R @ true_pose.rotation, drift_R @ pos[k] + drift_t)

        if k == 0:
            mu_p, sigma_p = 0.0, 1e-3
        else:
            mu_p, sigma_p = _vio_shift_stats(
                prev_true, true_pose, intr, 0.0, noise.centroid_sigma, rng
            )
        prev_true = true_pose

        kf = Keyframe(id=k, timestamp=s_vals[k] / spec.speed, pose=odo_pose, mu_p=mu_p, sigma_p=sigma_p)
        px_all, visible, depths = _project_batch(true_pose, intr, world.positions)
        for idx in np.nonzero(visible)[0]:
            any_visible = True
            if noise.detection_prob < 1.0 and rng.uniform() >= noise.detection_prob:
                continue
            centroid = px_all[idx] + (
                rng.normal(0.0, noise.centroid_sigma, 2) if noise.centroid_sigma > 0 else 0.0
            )
            size_px = f_mean * world.extents[idx] / depths[idx]
            if noise.size_jitter > 0:
                size_px *= rng.lognormal(0.0, noise.size_jitter)
            descriptors = None
            if base_desc is not None:
                descriptors = base_desc[idx] + rng.normal(
                    0.0, noise.descriptor_sigma, base_desc[idx].shape
                )
            obs = SegmentObservation(
                centroid=centroid,
                covariance=size_px * size_px * np.eye(2),
                size_px=size_px,
                pixel_count=max(3, int(round(4.0 * math.pi * size_px * size_px))),
                descriptors=descriptors,
            )
            gt.obs_ids[(k, len(kf.observations))] = int(world.stable_ids[idx])
            kf.observations.append(obs)
        log.keyframes.append(kf)

    if not any_visible:
        raise ValueError("no object is ever visible along the flight path")
    log.ground_truth_poses = list(gt.true_poses)
    return log, gt


def synthetic_map(
    n_objects: int,
    seed: int,
    spacing: float = 80.0,
    size_range: tuple[float, float] = (0.25, 16.0),
    turn_sigma_deg: float = 6.0,
) -> VehicleMap:
    """Directly synthesized vehicle map along a meandering path.

    Sizes are log-uniform so size gating keeps a realistic association
    density; intended for alignment benchmarks that bypass the front end.
    """
    rng = np.random.default_rng(seed)
    heading = np.cumsum(rng.normal(0.0, math.radians(turn_sigma_deg), n_objects))
    steps = np.column_stack(
        [spacing * np.cos(heading), spacing * np.sin(heading), np.zeros(n_objects)]
    )
    positions = np.cumsum(steps, axis=0)
    positions += rng.normal(0.0, 0.25 * spacing, positions.shape)
    positions[:, 2] = 0.0
    sizes = np.exp(rng.uniform(math.log(size_range[0]), math.log(size_range[1]), n_objects))
    objects = [
        MapObject(
            position=positions[k],
            size_m=float(sizes[k]),
            track_len=5,
            source_keyframes=(2 * k, 2 * k + 10),
        )
        for k in range(n_objects)
    ]
    return VehicleMap(objects=objects, frame_id="synthetic", params_hash="")


# -- ground-truth sidecar ------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(v) -> str:
    return ",".join(_fmt(x) for x in v)


def save_ground_truth(gt: GroundTruth, path) -> None:
    intr = gt.intrinsics
    lines = [
        f"{GT_MAGIC} {GT_VERSION} fx={_fmt(intr.fx)} fy={_fmt(intr.fy)} cx={_fmt(intr.cx)} "
        f"cy={_fmt(intr.cy)} width={intr.width} height={intr.height} ground_z={_fmt(gt.ground_z)}"
    ]
    for k, pose in enumerate(gt.true_poses):
        q = quaternion_from_rotation(pose.rotation)
        lines.append(f"truepose kf={k} q={_fmt_vec(q)} p={_fmt_vec(pose.translation)}")
    for (kf, oi), sid in gt.obs_ids.items():
        lines.append(f"obsid kf={kf} i={oi} id={sid}")
    for sid, p, e in zip(gt.object_ids, gt.object_positions, gt.object_extents):
        lines.append(f"object id={int(sid)} p={_fmt_vec(p)} extent={_fmt(e)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(GT_MAGIC):
        raise ValueError(f"not a ground-truth sidecar: {path}")
    head = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    intr = CameraIntrinsics(
        fx=float(head["fx"]),
        fy=float(head["fy"]),
        cx=float(head["cx"]),
        cy=float(head["cy"]),
        width=int(head["width"]),
        height=int(head["height"]),
    )
    gt = GroundTruth(
        true_poses=[],
        obs_ids={},
        object_ids=np.empty(0, dtype=np.int64),
        object_positions=np.zeros((0, 3)),
        object_extents=np.empty(0),
        intrinsics=intr,
        ground_z=float(head.get("ground_z", "0.0")),
    )
    ids, positions, extents = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, *rest = line.split(" ")
        fields = dict(tok.split("=", 1) for tok in rest)
        if kind == "truepose":
            q = [float(x) for x in fields["q"].split(",")]
            p = [float(x) for x in fields["p"].split(",")]
            gt.true_poses.append(Pose.from_quaternion(q, p))
        elif kind == "obsid":
            gt.obs_ids[(int(fields["kf"]), int(fields["i"]))] = int(fields["id"])
        elif kind == "object":
            ids.append(int(fields["id"]))
            positions.append([float(x) for x in fields["p"].split(",")])
            extents.append(float(fields["extent"]))
        else:
            raise ValueError(f"unknown ground-truth record {kind!r}")
    gt.object_ids = np.array(ids, dtype=np.int64)
    gt.object_positions = np.array(positions).reshape(-1, 3)
    gt.object_extents = np.array(extents)
    return gt
