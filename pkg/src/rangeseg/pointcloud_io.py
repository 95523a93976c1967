"""
Point cloud, box label and raster I/O.

Formats
-------
* KITTI Velodyne ``.bin``: consecutive little-endian ``float32`` quadruples
  ``(x, y, z, intensity)``.
* Box labels: JSON lines with keys ``class, cx, cy, cz, l, w, h, yaw`` in the
  LiDAR frame.
* ``RSEG`` raster: ``b"RSEG"``, ``u32`` H, ``u32`` W, then H*W class bytes.
* ``RSG2`` raster: same header with magic ``b"RSG2"`` and ``u16`` cells, used
  for instance ids.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from rangeseg._atomic import atomic_write_bytes, atomic_write_text
from rangeseg.errors import (
    BadMagicError,
    DataError,
    IntensityRangeError,
    NonFiniteValueError,
    SizeMismatchError,
    TruncatedFileError,
)

KITTI_DTYPE = np.dtype("<f4")
RSEG_MAGIC = b"RSEG"
RSG2_MAGIC = b"RSG2"
_HEADER = struct.Struct("<4sII")


class ObjectClass(IntEnum):
    BACKGROUND = 0
    CAR = 1
    PEDESTRIAN = 2
    CYCLIST = 3


CLASS_NAMES = {c.value: c.name.lower() for c in ObjectClass}


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True)
class PointCloud:
    """Ordered LiDAR returns as an ``(N, 4)`` float32 array ``x, y, z, intensity``.

    Row order is the file order, so row indices act as stable point ids.
    """

    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 4)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def ranges(self) -> np.ndarray:
        xyz = self.xyz.astype(np.float64)
        return np.sqrt(np.einsum("ij,ij->i", xyz, xyz))

    def point(self, i: int) -> Point:
        return Point(*(float(v) for v in self.points[i]))

    def subset(self, index) -> "PointCloud":
        return PointCloud(self.points[index], self.frame_id)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], frame_id: str = "") -> "PointCloud":
        arr = np.asarray(list(points), dtype=np.float32).reshape(-1, 4)
        return cls(arr, frame_id)


@dataclass(frozen=True)
class BoxLabel:
    class_id: int
    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        cid = int(self.class_id)
        if cid not in (1, 2, 3):
            raise DataError(f"box class must be 1, 2 or 3, got {self.class_id!r}")
        size = tuple(float(v) for v in self.size)
        center = tuple(float(v) for v in self.center)
        if len(size) != 3 or len(center) != 3:
            raise DataError("box center and size need three components")
        if not all(s > 0 for s in size):
            raise DataError(f"box size components must be positive, got {size}")
        object.__setattr__(self, "class_id", cid)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "yaw", float(self.yaw))

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Closed-interval containment test for an ``(N, 3)`` array of points."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        d = xyz - np.asarray(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        # rotate by -yaw into the box frame
        lx = c * d[:, 0] + s * d[:, 1]
        ly = -s * d[:, 0] + c * d[:, 1]
        length, width, height = self.size
        return (
            (np.abs(lx) <= length / 2)
            & (np.abs(ly) <= width / 2)
            & (np.abs(d[:, 2]) <= height / 2)
        )

    def to_json(self) -> dict:
        cx, cy, cz = self.center
        length, width, height = self.size
        return {"class": self.class_id, "cx": cx, "cy": cy, "cz": cz,
                "l": length, "w": width, "h": height, "yaw": self.yaw}

    @classmethod
    def from_json(cls, obj: dict) -> "BoxLabel":
        try:
            cls_value = obj["class"]
            if isinstance(cls_value, str):
                cls_value = ObjectClass[cls_value.upper()].value
            return cls(
                cls_value,
                (obj["cx"], obj["cy"], obj["cz"]),
                (obj["l"], obj["w"], obj["h"]),
                obj["yaw"],
            )
        except KeyError as exc:
            raise DataError(f"box label missing key {exc}") from None


# ---------------------------------------------------------------------------
# KITTI .bin


def decode_kitti_bytes(payload: bytes, frame_id: str = "") -> PointCloud:
    if len(payload) % 16:
        raise TruncatedFileError(
            f"KITTI payload of {len(payload)} bytes is not a multiple of 16")
    pts = np.frombuffer(payload, dtype=KITTI_DTYPE).reshape(-1, 4)
    if not np.isfinite(pts).all():
        bad = int(np.argmax(~np.isfinite(pts).all(axis=1)))
        raise NonFiniteValueError(f"non-finite value in point {bad}")
    out_of_range = (pts[:, 3] < 0) | (pts[:, 3] > 1)
    if out_of_range.any():
        bad = int(np.argmax(out_of_range))
        raise IntensityRangeError(f"intensity {pts[bad, 3]} of point {bad} outside [0, 1]")
    return PointCloud(pts.astype(np.float32), frame_id)


def load_kitti_bin(path) -> PointCloud:
    path = Path(path)
    try:
        return decode_kitti_bytes(path.read_bytes(), frame_id=path.stem)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_kitti_bin(path, cloud: PointCloud) -> None:
    atomic_write_bytes(path, cloud.points.astype(KITTI_DTYPE).tobytes())


# ---------------------------------------------------------------------------
# box labels


def label_points(cloud: PointCloud, boxes: Sequence[BoxLabel]) -> np.ndarray:
    """Class of the first box containing each point; 0 where no box does."""
    labels = np.zeros(len(cloud), dtype=np.uint8)
    unassigned = np.ones(len(cloud), dtype=bool)
    xyz = cloud.xyz
    for box in boxes:
        hit = unassigned & box.contains(xyz)
        labels[hit] = box.class_id
        unassigned &= ~hit
    return labels


def load_boxes(path) -> list[BoxLabel]:
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        boxes.append(BoxLabel.from_json(obj))
    return boxes


def save_boxes(path, boxes: Sequence[BoxLabel]) -> None:
    lines = [json.dumps(b.to_json(), sort_keys=True) for b in boxes]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# per-point labels (raw u8, one byte per point)


def save_point_labels(path, labels: np.ndarray) -> None:
    atomic_write_bytes(path, np.asarray(labels, dtype=np.uint8).tobytes())


def load_point_labels(path, expected: int | None = None) -> np.ndarray:
    labels = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8).copy()
    if expected is not None and labels.size != expected:
        raise SizeMismatchError(f"{path}: {labels.size} labels for {expected} points")
    return labels


# ---------------------------------------------------------------------------
# rasters


def _encode_raster(magic: bytes, raster: np.ndarray, dtype) -> bytes:
    raster = np.asarray(raster)
    if raster.ndim != 2 or raster.shape[0] == 0 or raster.shape[1] == 0:
        raise SizeMismatchError(f"raster must be a non-empty 2-D array, got {raster.shape}")
    info = np.iinfo(dtype)
    if raster.size and (raster.min() < info.min or raster.max() > info.max):
        raise DataError(f"raster values do not fit in {np.dtype(dtype).name}")
    h, w = raster.shape
    return _HEADER.pack(magic, h, w) + raster.astype(dtype).tobytes()


def _decode_raster(magic: bytes, payload: bytes, dtype) -> np.ndarray:
    if len(payload) < _HEADER.size:
        raise SizeMismatchError(f"raster file of {len(payload)} bytes has no header")
    got, h, w = _HEADER.unpack_from(payload)
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {got!r}")
    body = payload[_HEADER.size:]
    expected = h * w * np.dtype(dtype).itemsize
    if h == 0 or w == 0 or len(body) != expected:
        raise SizeMismatchError(f"raster {h}x{w} needs {expected} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).copy()


def raster_to_bytes(raster: np.ndarray) -> bytes:
    return _encode_raster(RSEG_MAGIC, raster, np.uint8)


def raster_from_bytes(payload: bytes) -> np.ndarray:
    return _decode_raster(RSEG_MAGIC, payload, np.uint8)


def save_raster(path, raster: np.ndarray) -> None:
    atomic_write_bytes(path, raster_to_bytes(raster))


def load_raster(path) -> np.ndarray:
    try:
        return raster_from_bytes(Path(path).read_bytes())
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_instance_raster(path, raster: np.ndarray) -> None:
    atomic_write_bytes(path, _encode_raster(RSG2_MAGIC, raster, np.dtype("<u2")))


def load_instance_raster(path) -> np.ndarray:
    try:
        return _decode_raster(RSG2_MAGIC, Path(path).read_bytes(), np.dtype("<u2"))
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None
