"""Observation-log parsing, keyframe distance gating, and mask summarization.

Log format: line-delimited UTF-8 text, one record per line. The header line
declares version, intrinsics, descriptor dimension, and odometry frame id.
Record kinds:

    objlog 1 fx=.. fy=.. cx=.. cy=.. width=.. height=.. desc_dim=.. frame=..
    meta <key> <value>
    keyframe id=.. t=.. q=w,x,y,z p=x,y,z mu_p=.. sigma_p=..
    obs kf=.. c=u,v cov=p00,p01,p11 n=.. [d=v1,..;v1,..]
    mask kf=.. x0=.. y0=.. w=.. h=.. rle=r0,r1,..

Floats are written with full round-trip precision, so save followed by load
is the identity on the data model. ``mask`` records carry a row-major
run-length encoding (alternating zero/one runs, first run zeros) and are
summarized into observations on ingest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Pose, quaternion_from_rotation

__all__ = [
    "SegmentObservation",
    "Keyframe",
    "FlightLog",
    "LogParseError",
    "InvariantViolation",
    "lambda_max_2x2",
    "summarize_mask",
    "rle_decode",
    "gate_keyframes",
    "load_flight_log",
    "save_flight_log",
]

LOG_MAGIC = "objlog"
LOG_VERSION = 1
MIN_PIXELS = 2  # masks must be larger than this many pixels
SIGMA_P_FLOOR = 1e-3


class LogParseError(ValueError):
    """Malformed observation log; message carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class InvariantViolation(ValueError):
    """A record violates a data-model invariant; names the field."""

    def __init__(self, fld: str, message: str):
        super().__init__(f"{fld}: {message}")
        self.field = fld


def lambda_max_2x2(cov: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric 2x2 matrix, closed form."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    m = 0.5 * (a + c)
    d = math.hypot(0.5 * (a - c), b)
    return m + d


@dataclass(frozen=True)
class SegmentObservation:
    """One segmented mask summarized as centroid, covariance, and size."""

    centroid: np.ndarray  # (2,) pixels
    covariance: np.ndarray  # (2,2) pixels^2, symmetric PSD
    size_px: float  # sqrt of the largest covariance eigenvalue
    pixel_count: int
    descriptors: np.ndarray | None = None  # (k, d) appearance vectors

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float).reshape(2)
        P = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "covariance", P)
        if abs(P[0, 1] - P[1, 0]) >= 1e-9:
            raise InvariantViolation("covariance", "matrix not symmetric")
        lam_max = lambda_max_2x2(P)
        lam_min = P[0, 0] + P[1, 1] - lam_max
        if lam_min < -1e-9:
            raise InvariantViolation("covariance", f"negative eigenvalue {lam_min:.3e}")
        if abs(self.size_px - math.sqrt(max(lam_max, 0.0))) > 1e-6:
            raise InvariantViolation("size_px", "does not equal sqrt(lambda_max)")
        if self.pixel_count <= MIN_PIXELS:
            raise InvariantViolation("pixel_count", f"must exceed {MIN_PIXELS}")
        if self.descriptors is not None:
            D = np.asarray(self.descriptors, dtype=float)
            if D.ndim != 2:
                raise InvariantViolation("descriptors", "expected a 2-D array")
            object.__setattr__(self, "descriptors", D)

    @classmethod
    def from_moments(
        cls,
        centroid,
        covariance,
        pixel_count: int,
        descriptors=None,
    ) -> "SegmentObservation":
        P = np.asarray(covariance, dtype=float).reshape(2, 2)
        P = 0.5 * (P + P.T)
        size_px = math.sqrt(max(lambda_max_2x2(P), 0.0))
        return cls(centroid, P, size_px, pixel_count, descriptors)


@dataclass
class Keyframe:
    """One selected camera frame with its pose and VIO shift statistics."""

    id: int
    timestamp: float
    pose: Pose
    mu_p: float  # mean pixel shift of VIO-tracked features since previous keyframe
    sigma_p: float  # std of the same shift, clamped to a positive floor
    observations: list[SegmentObservation] = field(default_factory=list)
    quat_wxyz: np.ndarray | None = None  # pose rotation as serialized, kept so
    # that save(load(x)) reproduces x byte for byte

    def __post_init__(self):
        self.sigma_p = max(float(self.sigma_p), SIGMA_P_FLOOR)


@dataclass
class FlightLog:
    """A full traverse: intrinsics, keyframes, and free-form metadata."""

    intrinsics: CameraIntrinsics
    keyframes: list[Keyframe] = field(default_factory=list)
    ground_truth_poses: list[Pose] | None = None
    meta: dict[str, str] = field(default_factory=dict)
    descriptor_dim: int = 0
    frame_id: str = "odom"


def rle_decode(runs, width: int, height: int) -> np.ndarray:
    """Decode alternating zero/one run lengths (first run zeros) to a bool mask."""
    out = np.zeros(width * height, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        r = int(r)
        if r < 0:
            raise ValueError("negative run length")
        if val:
            out[pos : pos + r] = True
        pos += r
        val = not val
    if pos != width * height:
        raise ValueError(f"run lengths sum to {pos}, expected {width * height}")
    return out.reshape(height, width)


def summarize_mask(mask: np.ndarray, origin=(0, 0)) -> SegmentObservation | None:
    """Summarize a binary mask into an observation; None for masks of <= 2 px.

    Pixel coordinates are (x, y) = (column + origin_x, row + origin_y); the
    covariance is the population (divide-by-N) form.
    """
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    n = len(xs)
    if n <= MIN_PIXELS:
        return None
    pts = np.stack([xs + origin[0], ys + origin[1]], axis=1).astype(float)
    mean = pts.mean(axis=0)
    diff = pts - mean
    cov = diff.T @ diff / n
    return SegmentObservation.from_moments(mean, cov, n)


def gate_keyframes(positions, min_dist: float) -> list[int]:
    """Greedy distance gate: keep frame 0, then every frame >= min_dist from
    the last kept one."""
    if min_dist <= 0:
        raise ValueError("min_dist must be positive")
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(pos) == 0:
        return []
    kept = [0]
    last = pos[0]
    for i in range(1, len(pos)):
        if np.linalg.norm(pos[i] - last) >= min_dist:
            kept.append(i)
            last = pos[i]
    return kept


# -- text serialization ------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(v) -> str:
    return ",".join(_fmt(x) for x in v)


def _parse_fields(parts: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for p in parts:
        if "=" not in p:
            raise LogParseError(f"expected key=value token, got {p!r}", line_no)
        k, v = p.split("=", 1)
        out[k] = v
    return out


def _need(fields: dict[str, str], key: str, line_no: int) -> str:
    if key not in fields:
        raise LogParseError(f"missing field {key!r}", line_no)
    return fields[key]


def save_flight_log(log: FlightLog, path) -> None:
    intr = log.intrinsics
    lines = [
        f"{LOG_MAGIC} {LOG_VERSION} fx={_fmt(intr.fx)} fy={_fmt(intr.fy)} "
        f"cx={_fmt(intr.cx)} cy={_fmt(intr.cy)} width={intr.width} height={intr.height} "
        f"desc_dim={log.descriptor_dim} frame={log.frame_id}"
    ]
    for k, v in log.meta.items():
        lines.append(f"meta {k} {v}")
    for kf in log.keyframes:
        q = kf.quat_wxyz if kf.quat_wxyz is not None else quaternion_from_rotation(kf.pose.rotation)
        lines.append(
            f"keyframe id={kf.id} t={_fmt(kf.timestamp)} q={_fmt_vec(q)} "
            f"p={_fmt_vec(kf.pose.translation)} mu_p={_fmt(kf.mu_p)} sigma_p={_fmt(kf.sigma_p)}"
        )
        for obs in kf.observations:
            cov = obs.covariance
            rec = (
                f"obs kf={kf.id} c={_fmt_vec(obs.centroid)} "
                f"cov={_fmt(cov[0, 0])},{_fmt(cov[0, 1])},{_fmt(cov[1, 1])} n={obs.pixel_count}"
            )
            if obs.descriptors is not None and len(obs.descriptors):
                rec += " d=" + ";".join(_fmt_vec(d) for d in obs.descriptors)
            lines.append(rec)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_flight_log(path) -> FlightLog:
    """Parse and fully validate an observation log."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise LogParseError("empty file", 1)

    head = lines[0].split()
    if len(head) < 2 or head[0] != LOG_MAGIC:
        raise LogParseError(f"bad header magic (expected {LOG_MAGIC!r})", 1)
    try:
        version = int(head[1])
    except ValueError:
        raise LogParseError("header version is not an integer", 1) from None
    if version != LOG_VERSION:
        raise LogParseError(f"unsupported log version {version}", 1)
    hf = _parse_fields(head[2:], 1)
    try:
        intr = CameraIntrinsics(
            fx=float(_need(hf, "fx", 1)),
            fy=float(_need(hf, "fy", 1)),
            cx=float(_need(hf, "cx", 1)),
            cy=float(_need(hf, "cy", 1)),
            width=int(_need(hf, "width", 1)),
            height=int(_need(hf, "height", 1)),
        )
    except ValueError as e:
        raise LogParseError(f"bad intrinsics: {e}", 1) from None
    desc_dim = int(hf.get("desc_dim", "0"))
    frame_id = hf.get("frame", "odom")

    log = FlightLog(intrinsics=intr, descriptor_dim=desc_dim, frame_id=frame_id)
    by_id: dict[int, Keyframe] = {}
    last_id: int | None = None

    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, *rest = line.split(" ")
        if kind == "meta":
            if not rest:
                raise LogParseError("meta record needs a key", line_no)
            log.meta[rest[0]] = " ".join(rest[1:])
            continue
        fields = _parse_fields(rest, line_no)
        try:
            if kind == "keyframe":
                kf_id = int(_need(fields, "id", line_no))
                if last_id is not None and kf_id <= last_id:
                    raise InvariantViolation(
                        "keyframe.id", f"ids must increase ({kf_id} after {last_id})"
                    )
                last_id = kf_id
                q = [float(x) for x in _need(fields, "q", line_no).split(",")]
                p = [float(x) for x in _need(fields, "p", line_no).split(",")]
                try:
                    pose = Pose.from_quaternion(q, p, frame_id)
                except ValueError as e:
                    raise InvariantViolation("keyframe.q", str(e)) from None
                kf = Keyframe(
                    id=kf_id,
                    timestamp=float(_need(fields, "t", line_no)),
                    pose=pose,
                    mu_p=float(_need(fields, "mu_p", line_no)),
                    sigma_p=float(_need(fields, "sigma_p", line_no)),
                    quat_wxyz=np.array(q),
                )
                log.keyframes.append(kf)
                by_id[kf_id] = kf
            elif kind == "obs":
                kf_id = int(_need(fields, "kf", line_no))
                if kf_id not in by_id:
                    raise LogParseError(f"obs references unknown keyframe {kf_id}", line_no)
                c = [float(x) for x in _need(fields, "c", line_no).split(",")]
                p00, p01, p11 = (float(x) for x in _need(fields, "cov", line_no).split(","))
                descriptors = None
                if "d" in fields and fields["d"]:
                    descriptors = np.array(
                        [[float(x) for x in vec.split(",")] for vec in fields["d"].split(";")]
                    )
                    if descriptors.shape[1] != desc_dim:
                        raise InvariantViolation(
                            "descriptors",
                            f"dimension {descriptors.shape[1]} != declared {desc_dim}",
                        )
                obs = SegmentObservation.from_moments(
                    c,
                    [[p00, p01], [p01, p11]],
                    int(_need(fields, "n", line_no)),
                    descriptors,
                )
                by_id[kf_id].observations.append(obs)
            elif kind == "mask":
                kf_id = int(_need(fields, "kf", line_no))
                if kf_id not in by_id:
                    raise LogParseError(f"mask references unknown keyframe {kf_id}", line_no)
                w = int(_need(fields, "w", line_no))
                h = int(_need(fields, "h", line_no))
                x0 = int(fields.get("x0", "0"))
                y0 = int(fields.get("y0", "0"))
                runs = [int(x) for x in _need(fields, "rle", line_no).split(",")]
                mask = rle_decode(runs, w, h)
                obs = summarize_mask(mask, origin=(x0, y0))
                if obs is not None:
                    by_id[kf_id].observations.append(obs)
            else:
                raise LogParseError(f"unknown record kind {kind!r}", line_no)
        except InvariantViolation:
            raise
        except LogParseError:
            raise
        except ValueError as e:
            raise LogParseError(str(e), line_no) from None
    return log
