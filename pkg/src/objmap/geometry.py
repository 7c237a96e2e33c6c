"""Poses, pinhole projection, epipolar geometry, and rigid point-set registration.

Conventions: rotations are 3x3 orthonormal matrices stored as the
world-from-body direction, so a body-frame point b maps to the world as
``R @ b + t``. The camera looks along its body +Z axis; pixel x grows with
body x, pixel y with body y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "CameraIntrinsics",
    "RigidTransform",
    "DegenerateBaselineError",
    "DegenerateConfigurationError",
    "rotation_from_quaternion",
    "quaternion_from_rotation",
    "rot_x",
    "rot_y",
    "rot_z",
    "project",
    "project_many",
    "back_project",
    "epipolar_distance",
    "estimate_rigid_transform",
    "euler_zyx",
    "roll_pitch",
]

_ORTHO_TOL = 1e-9


class DegenerateBaselineError(ValueError):
    """Relative translation too small for an epipolar constraint."""


class DegenerateConfigurationError(ValueError):
    """Point configuration does not determine a unique rigid transform."""


def _check_rotation(rotation: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
    err = np.abs(rotation @ rotation.T - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
    if np.linalg.det(rotation) < 0:
        raise ValueError("rotation has determinant -1 (reflection)")
    return rotation


@dataclass(frozen=True)
class Pose:
    """Camera pose: world-from-body rotation plus camera center in meters."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_id: str = "odom"

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_quaternion(cls, wxyz, translation, frame_id: str = "odom") -> "Pose":
        return cls(rotation_from_quaternion(wxyz), translation, frame_id)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (n,3) or (3,) into the camera/body frame."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ self.rotation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if min(self.fx, self.fy) <= 0 or min(self.width, self.height) <= 0:
            raise ValueError("focal lengths and image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform; applies as ``rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def rotation_from_quaternion(wxyz, tol: float = 1e-6) -> np.ndarray:
    """Rotation matrix from a wxyz quaternion; rejects badly unnormalized input."""
    q = np.asarray(wxyz, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > tol:
        raise ValueError(f"quaternion norm {n:.8f} deviates from 1 by more than {tol}")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit wxyz quaternion (w >= 0) for an orthonormal rotation matrix."""
    R = np.asarray(rotation, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


_MIN_DEPTH = 1e-6


def project(pose: Pose, intr: CameraIntrinsics, point) -> np.ndarray | None:
    """Project a world point to pixels; None when at or behind the camera."""
    X, Y, Z = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.translation)
    if Z <= _MIN_DEPTH:
        return None
    return np.array([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy])


def project_many(
    pose: Pose, intr: CameraIntrinsics, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (n,3) world points.

    Returns (pixels (n,2), in_front (n,) bool). Pixels for points behind the
    camera are NaN.
    """
    cam = pose.to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    z = cam[:, 2]
    ok = z > _MIN_DEPTH
    px = np.full((len(cam), 2), np.nan)
    px[ok, 0] = intr.fx * cam[ok, 0] / z[ok] + intr.cx
    px[ok, 1] = intr.fy * cam[ok, 1] / z[ok] + intr.cy
    return px, ok


def back_project(pose: Pose, intr: CameraIntrinsics, pixel) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray (origin, unit direction) through a pixel."""
    u, v = np.asarray(pixel, dtype=float)
    d = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d = pose.rotation @ d
    return pose.translation.copy(), d / np.linalg.norm(d)


def _line_point_distance(line: np.ndarray, px: np.ndarray) -> float:
    n = math.hypot(line[0], line[1])
    if n < 1e-15:
        return math.inf
    return abs(line[0] * px[0] + line[1] * px[1] + line[2]) / n


def epipolar_distance(
    pose_a: Pose, pose_b: Pose, intr: CameraIntrinsics, px_a, px_b
) -> float:
    """Symmetric epipolar point-line distance in pixels.

    Computes the essential matrix of the relative pose, transfers each pixel
    into the other view's epipolar line, and returns the larger of the two
    perpendicular distances.
    """
    R_ba = pose_b.rotation.T @ pose_a.rotation
    t_ba = pose_b.rotation.T @ (pose_a.translation - pose_b.translation)
    if np.linalg.norm(t_ba) < 1e-9:
        raise DegenerateBaselineError(
            "relative translation below 1e-9 m; epipolar constraint undefined"
        )
    tx = np.array(
        [[0, -t_ba[2], t_ba[1]], [t_ba[2], 0, -t_ba[0]], [-t_ba[1], t_ba[0], 0]]
    )
    E = tx @ R_ba
    K = intr.matrix
    Kinv = np.linalg.inv(K)
    F = Kinv.T @ E @ Kinv  # pixel-space fundamental matrix
    pa = np.array([px_a[0], px_a[1], 1.0])
    pb = np.array([px_b[0], px_b[1], 1.0])
    d_b = _line_point_distance(F @ pa, np.asarray(px_b, dtype=float))
    d_a = _line_point_distance(F.T @ pb, np.asarray(px_a, dtype=float))
    return max(d_a, d_b)


def estimate_rigid_transform(src, dst) -> RigidTransform:
    """Least-squares SE(3) fit mapping src[k] onto dst[k] (SVD method).

    Raises DegenerateConfigurationError for fewer than 3 points or a
    collinear configuration (cross-covariance rank < 2).
    """
    A = np.asarray(src, dtype=float).reshape(-1, 3)
    B = np.asarray(dst, dtype=float).reshape(-1, 3)
    if A.shape != B.shape:
        raise ValueError("src and dst must have equal length")
    if len(A) < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, S, Vt = np.linalg.svd(H)
    # collinear points leave only one informative singular direction
    if S[1] <= max(S[0] * 1e-9, 1e-12):
        raise DegenerateConfigurationError("points are collinear; rotation ambiguous")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cb - R @ ca)


def euler_zyx(rotation: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) degrees of the Z-Y-X decomposition R = Rz Ry Rx.

    At the pitch = +/-90 deg singularity roll is defined as 0.
    """
    R = np.asarray(rotation, dtype=float)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.degrees(math.asin(sp))
    if abs(sp) > 1.0 - 1e-12:
        roll = 0.0
        yaw = math.degrees(math.atan2(-R[0, 1], R[1, 1]))
    else:
        roll = math.degrees(math.atan2(R[2, 1], R[2, 2]))
        yaw = math.degrees(math.atan2(R[1, 0], R[0, 0]))
    return roll, pitch, yaw


def roll_pitch(transform: RigidTransform) -> tuple[float, float]:
    """Roll and pitch (degrees, each in (-180, 180]) of a rigid transform."""
    roll, pitch, _ = euler_zyx(transform.rotation)
    return roll, pitch
