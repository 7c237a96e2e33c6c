"""Object-based vehicle maps from segment observations, and map-to-map alignment.

The pipeline has two halves: a mapping front end that tracks segment
observations across posed keyframes and reconstructs a compact object map,
and an alignment back end that finds correspondences between two such maps
with a windowed, geometrically consistent search.
"""

__version__ = "0.1.0"

from .geometry import CameraIntrinsics, Pose, RigidTransform
from .ingest import FlightLog, Keyframe, SegmentObservation
from .reconstruct import MapObject, VehicleMap

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "RigidTransform",
    "FlightLog",
    "Keyframe",
    "SegmentObservation",
    "MapObject",
    "VehicleMap",
    "__version__",
]
