"""Compact binary map format.

Little-endian layout: 4-byte magic "SOSM", u16 version, u32 object count,
u16-length-prefixed UTF-8 frame id; then 26 bytes per object (3 x f32
position, f32 size, u16 track length, u32 first/last keyframe); then a u32
CRC-32 of the object payload. A 1000-object map is about 26 KB.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

from .reconstruct import MapObject, VehicleMap

__all__ = [
    "MAP_MAGIC",
    "MAP_VERSION",
    "OBJECT_RECORD_SIZE",
    "MapFormatError",
    "BadMagicError",
    "VersionMismatchError",
    "CrcMismatchError",
    "TruncatedMapError",
    "save_map",
    "load_map",
    "map_file_size",
]

MAP_MAGIC = b"SOSM"
MAP_VERSION = 1
_OBJ_FMT = "<ffffHII"
OBJECT_RECORD_SIZE = struct.calcsize(_OBJ_FMT)  # 26 bytes


class MapFormatError(ValueError):
    """Base class for map-file errors."""


class BadMagicError(MapFormatError):
    pass


class VersionMismatchError(MapFormatError):
    pass


class CrcMismatchError(MapFormatError):
    pass


class TruncatedMapError(MapFormatError):
    pass


def map_file_size(n_objects: int, frame_id: str = "odom") -> int:
    """Exact on-disk size in bytes for a map with n objects."""
    return 12 + len(frame_id.encode("utf-8")) + OBJECT_RECORD_SIZE * n_objects + 4


def save_map(vmap: VehicleMap, path) -> None:
    frame = vmap.frame_id.encode("utf-8")
    header = MAP_MAGIC + struct.pack("<HIH", MAP_VERSION, len(vmap), len(frame)) + frame
    payload = b"".join(
        struct.pack(
            _OBJ_FMT,
            float(o.position[0]),
            float(o.position[1]),
            float(o.position[2]),
            float(o.size_m),
            int(o.track_len),
            int(o.source_keyframes[0]),
            int(o.source_keyframes[1]),
        )
        for o in vmap.objects
    )
    footer = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(header + payload + footer)


def load_map(path) -> VehicleMap:
    """Read and verify a map file; raises a distinct error per failure mode."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAP_MAGIC:
        raise BadMagicError(f"not a map file (magic {data[:4]!r})")
    if len(data) < 12:
        raise TruncatedMapError("header truncated")
    version, count, frame_len = struct.unpack_from("<HIH", data, 4)
    if version != MAP_VERSION:
        raise VersionMismatchError(f"unsupported map version {version}")
    offset = 12 + frame_len
    if len(data) < offset:
        raise TruncatedMapError("frame id truncated")
    frame_id = data[12:offset].decode("utf-8")
    expected = offset + OBJECT_RECORD_SIZE * count + 4
    if len(data) != expected:
        raise TruncatedMapError(
            f"file is {len(data)} bytes, expected {expected} for {count} objects"
        )
    payload = data[offset:-4]
    (crc_stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CrcMismatchError("payload CRC mismatch")
    objects = []
    for k in range(count):
        x, y, z, size_m, track_len, first_kf, last_kf = struct.unpack_from(
            _OBJ_FMT, payload, k * OBJECT_RECORD_SIZE
        )
        objects.append(
            MapObject(
                position=(x, y, z),
                size_m=size_m,
                track_len=track_len,
                source_keyframes=(first_kf, last_kf),
            )
        )
    vmap = VehicleMap(objects=objects, frame_id=frame_id, params_hash="")
    vmap.validate()
    return vmap
