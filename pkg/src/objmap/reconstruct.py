"""Per-track landmark triangulation and vehicle-map assembly.

Each completed track is reconstructed independently: the landmark position
minimizes the reprojection error of the track's centroids against fixed
odometry poses (damped Gauss-Newton over the 3-vector only). Tracks that do
not converge, fall behind a camera, or lack parallax are discarded.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, back_project
from .ingest import FlightLog
from .tracking import Track

__all__ = [
    "ReconstructionParams",
    "MapObject",
    "VehicleMap",
    "reprojection_cost",
    "triangulate_track",
    "metric_size",
    "build_map",
]

_MIN_DEPTH = 1e-6
_MIN_PARALLAX_DEG = 0.5


@dataclass(frozen=True)
class ReconstructionParams:
    n_lim: int = 5  # minimum observations per reconstructed track
    sigma_px: float = 3.0  # centroid measurement noise, px
    max_iters: int = 50
    cost_tol: float = 1e-9  # relative cost decrease
    step_tol: float = 1e-6  # step norm, m

    def __post_init__(self):
        if min(self.n_lim, self.sigma_px, self.max_iters, self.cost_tol, self.step_tol) <= 0:
            raise ValueError("reconstruction parameters must be positive")


@dataclass(frozen=True)
class MapObject:
    """One reconstructed object: position and metric size in the odometry frame."""

    position: np.ndarray  # (3,) m
    size_m: float
    track_len: int
    source_keyframes: tuple[int, int]  # (first, last) keyframe id

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=float).reshape(3)
        )
        if self.size_m <= 0:
            raise ValueError("size_m must be positive")


@dataclass
class VehicleMap:
    """Ordered list of reconstructed objects (order = track creation order)."""

    objects: list[MapObject] = field(default_factory=list)
    frame_id: str = "odom"
    params_hash: str = ""

    def __len__(self) -> int:
        return len(self.objects)

    def positions(self) -> np.ndarray:
        if not self.objects:
            return np.zeros((0, 3))
        return np.stack([o.position for o in self.objects])

    def sizes(self) -> np.ndarray:
        return np.array([o.size_m for o in self.objects])

    def validate(self) -> None:
        firsts = [o.source_keyframes[0] for o in self.objects]
        if any(b < a for a, b in zip(firsts, firsts[1:])):
            raise ValueError("objects must be ordered by first source keyframe")


def _camera_frame(points: np.ndarray, pose: Pose) -> np.ndarray:
    return (points - pose.translation) @ pose.rotation


def reprojection_cost(
    point,
    centroids: np.ndarray,
    poses: list[Pose],
    intr: CameraIntrinsics,
    sigma_px: float,
) -> tuple[float, np.ndarray] | None:
    """Noise-normalized reprojection cost and its analytic gradient.

    Returns None when the point is at or behind any of the cameras.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    cost = 0.0
    grad = np.zeros(3)
    for c, pose in zip(np.asarray(centroids, dtype=float), poses):
        X, Y, Z = pose.rotation.T @ (p - pose.translation)
        if Z <= _MIN_DEPTH:
            return None
        rx = (intr.fx * X / Z + intr.cx - c[0]) / sigma_px
        ry = (intr.fy * Y / Z + intr.cy - c[1]) / sigma_px
        cost += rx * rx + ry * ry
        # d(pixel)/d(point) = d(pixel)/d(cam) @ R^T
        Jc = (
            np.array(
                [
                    [intr.fx / Z, 0.0, -intr.fx * X / (Z * Z)],
                    [0.0, intr.fy / Z, -intr.fy * Y / (Z * Z)],
                ]
            )
            / sigma_px
        )
        J = Jc @ pose.rotation.T
        grad += 2.0 * (rx * J[0] + ry * J[1])
    return cost, grad


def _residuals_jacobian(p, centroids, poses, intr, sigma_px):
    n = len(poses)
    r = np.empty(2 * n)
    J = np.empty((2 * n, 3))
    for k, (c, pose) in enumerate(zip(centroids, poses)):
        X, Y, Z = pose.rotation.T @ (p - pose.translation)
        if Z <= _MIN_DEPTH:
            return None
        r[2 * k] = (intr.fx * X / Z + intr.cx - c[0]) / sigma_px
        r[2 * k + 1] = (intr.fy * Y / Z + intr.cy - c[1]) / sigma_px
        Jc = (
            np.array(
                [
                    [intr.fx / Z, 0.0, -intr.fx * X / (Z * Z)],
                    [0.0, intr.fy / Z, -intr.fy * Y / (Z * Z)],
                ]
            )
            / sigma_px
        )
        J[2 * k : 2 * k + 2] = Jc @ pose.rotation.T
    return r, J


def _midpoint_init(c_first, c_last, pose_first, pose_last, intr):
    """Midpoint of the closest approach of the first/last observation rays.

    Returns None when the rays have less than the minimum parallax.
    """
    o1, d1 = back_project(pose_first, intr, c_first)
    o2, d2 = back_project(pose_last, intr, c_last)
    cosang = float(np.clip(np.dot(d1, d2), -1.0, 1.0))
    if math.degrees(math.acos(cosang)) < _MIN_PARALLAX_DEG:
        return None
    A = np.stack([d1, -d2], axis=1)
    st, *_ = np.linalg.lstsq(A, o2 - o1, rcond=None)
    return 0.5 * (o1 + st[0] * d1 + o2 + st[1] * d2)


def triangulate_track(
    centroids: np.ndarray,
    poses: list[Pose],
    intr: CameraIntrinsics,
    params: ReconstructionParams,
) -> np.ndarray | None:
    """Landmark position minimizing reprojection error, or None on divergence.

    Divergence covers: insufficient first/last-ray parallax, iteration budget
    exhausted, and a solution at or behind any observing camera.
    """
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(centroids) < params.n_lim:
        raise ValueError(f"track needs at least {params.n_lim} observations")
    p = _midpoint_init(centroids[0], centroids[-1], poses[0], poses[-1], intr)
    if p is None:
        return None

    ev = reprojection_cost(p, centroids, poses, intr, params.sigma_px)
    if ev is None:
        return None
    cost = ev[0]
    lam = 1e-3
    converged = False
    for _ in range(params.max_iters):
        rj = _residuals_jacobian(p, centroids, poses, intr, params.sigma_px)
        if rj is None:
            return None
        r, J = rj
        g = J.T @ r
        H = J.T @ J
        try:
            delta = np.linalg.solve(H + lam * np.eye(3), -g)
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(delta) < params.step_tol:
            converged = True
            break
        cand = p + delta
        ev = reprojection_cost(cand, centroids, poses, intr, params.sigma_px)
        new_cost = math.inf if ev is None else ev[0]
        if new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            p, cost = cand, new_cost
            lam *= 0.5
            if rel < params.cost_tol:
                converged = True
                break
        else:
            lam *= 10.0
    if not converged:
        return None
    # undamped polish: drives the gradient to the noise floor once the
    # damped loop has localized the optimum
    for _ in range(3):
        rj = _residuals_jacobian(p, centroids, poses, intr, params.sigma_px)
        if rj is None:
            return None
        r, J = rj
        try:
            delta = np.linalg.solve(J.T @ J, -(J.T @ r))
        except np.linalg.LinAlgError:
            break
        ev = reprojection_cost(p + delta, centroids, poses, intr, params.sigma_px)
        if ev is None or ev[0] > cost:
            break
        p, cost = p + delta, ev[0]
        if np.linalg.norm(delta) < 1e-12:
            break
    # reject solutions at or behind any observing camera
    for pose in poses:
        if (pose.rotation.T @ (p - pose.translation))[2] <= _MIN_DEPTH:
            return None
    return p


def metric_size(
    sizes_px: np.ndarray,
    position: np.ndarray,
    poses: list[Pose],
    intr: CameraIntrinsics,
) -> float | None:
    """Depth-scaled size descriptor in meters: mean of size_px * depth / f.

    Observations behind the camera are excluded; None when all are.
    """
    f = 0.5 * (intr.fx + intr.fy)
    vals = []
    for s, pose in zip(np.asarray(sizes_px, dtype=float), poses):
        depth = (pose.rotation.T @ (np.asarray(position) - pose.translation))[2]
        if depth > _MIN_DEPTH:
            vals.append(s * depth / f)
    if not vals:
        return None
    return float(np.mean(vals))


def _hash_params(*objs) -> str:
    h = hashlib.sha256()
    for o in objs:
        h.update(repr(o).encode())
    return h.hexdigest()[:16]


def build_map(
    tracks: list[Track],
    log: FlightLog,
    params: ReconstructionParams,
    params_hash: str | None = None,
) -> VehicleMap:
    """Triangulate every track with >= n_lim entries into a VehicleMap.

    Divergent tracks are dropped; surviving objects keep track creation order.
    """
    poses_by_kf = {kf.id: kf.pose for kf in log.keyframes}
    obs_by_kf = {kf.id: kf.observations for kf in log.keyframes}
    intr = log.intrinsics
    objects: list[MapObject] = []
    for track in sorted(tracks, key=lambda t: t.id):
        if len(track) < params.n_lim:
            continue
        centroids = np.array(
            [obs_by_kf[kf][oi].centroid for kf, oi in track.entries]
        )
        sizes = np.array([obs_by_kf[kf][oi].size_px for kf, oi in track.entries])
        poses = [poses_by_kf[kf] for kf, _ in track.entries]
        position = triangulate_track(centroids, poses, intr, params)
        if position is None:
            continue
        size_m = metric_size(sizes, position, poses, intr)
        if size_m is None:
            continue
        objects.append(
            MapObject(
                position=position,
                size_m=size_m,
                track_len=len(track),
                source_keyframes=(track.first_keyframe, track.last_keyframe),
            )
        )
    vm = VehicleMap(
        objects=objects,
        frame_id=log.frame_id,
        params_hash=params_hash if params_hash is not None else _hash_params(params),
    )
    vm.validate()
    return vm
