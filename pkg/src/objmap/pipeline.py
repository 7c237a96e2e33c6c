"""Log-to-map convenience wiring used by the CLI and tests."""

from __future__ import annotations

import math

from .config import PipelineConfig
from .ingest import FlightLog, Keyframe, gate_keyframes
from .reconstruct import VehicleMap, build_map
from .tracking import Tracker

__all__ = ["build_map_from_log", "regate_log"]


def regate_log(log: FlightLog, min_spacing: float) -> FlightLog:
    """Re-apply the keyframe distance gate to an already-recorded log.

    VIO shift statistics of dropped frames are folded into the next kept
    keyframe (means add; deviations add in quadrature).
    """
    kept = gate_keyframes([kf.pose.translation for kf in log.keyframes], min_spacing)
    keyframes = []
    prev = None
    for i in kept:
        src = log.keyframes[i]
        if prev is None:
            mu, sd = src.mu_p, src.sigma_p
        else:
            span = log.keyframes[prev + 1 : i + 1]
            mu = sum(k.mu_p for k in span)
            sd = math.sqrt(sum(k.sigma_p**2 for k in span))
        keyframes.append(
            Keyframe(
                id=src.id,
                timestamp=src.timestamp,
                pose=src.pose,
                mu_p=mu,
                sigma_p=sd,
                observations=src.observations,
            )
        )
        prev = i
    gt = None
    if log.ground_truth_poses is not None:
        gt = [log.ground_truth_poses[i] for i in kept]
    return FlightLog(
        intrinsics=log.intrinsics,
        keyframes=keyframes,
        ground_truth_poses=gt,
        meta=dict(log.meta),
        descriptor_dim=log.descriptor_dim,
        frame_id=log.frame_id,
    )


def build_map_from_log(log: FlightLog, cfg: PipelineConfig) -> tuple[VehicleMap, dict]:
    """Track a full log and reconstruct its vehicle map.

    Returns the map plus counters: completed tracks, reconstructed objects,
    and tracks discarded as divergent.
    """
    tracker = Tracker(log.intrinsics, cfg.tracker_params(), min_track_len=cfg.n_lim)
    tracks = tracker.run(log.keyframes)
    vmap = build_map(tracks, log, cfg.reconstruction_params(), params_hash=cfg.params_hash())
    stats = {
        "tracks": len(tracks),
        "objects": len(vmap),
        "diverged": len(tracks) - len(vmap),
    }
    return vmap, stats
