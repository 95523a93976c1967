"""
Spherical projection of point clouds onto dense range images.

Each cell of an ``H x W`` grid holds ``K`` features of the nearest return that
falls into it (intensity, normalized range, occupancy by default) together with
the index of that return in the source cloud.  Row 0 is the top of the image,
i.e. the largest elevation angle.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rangeseg._atomic import atomic_write_bytes
from rangeseg.errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DegenerateOriginError,
    ShapeMismatchError,
    SizeMismatchError,
)
from rangeseg.pointcloud_io import Point, PointCloud

RIMG_MAGIC = b"RIMG"
_RIMG_HEADER = struct.Struct("<4sIII")

CHANNELS_3 = ("intensity", "range", "occupancy")
CHANNELS_2 = ("range", "occupancy")


@dataclass(frozen=True)
class ProjectionConfig:
    """Grid geometry; angles in radians, ranges in meters.

    The defaults describe the forward 90 degree view of a Velodyne HDL-64E.
    """

    H: int = 64
    W: int = 512
    theta_min: float = math.radians(-24.8)
    theta_max: float = math.radians(2.0)
    phi_min: float = math.radians(-45.0)
    phi_max: float = math.radians(45.0)
    r_max: float = 80.0

    def __post_init__(self):
        if self.H < 1 or self.W < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.H}x{self.W}")
        if not self.theta_max > self.theta_min:
            raise ConfigError("theta_max must exceed theta_min")
        if not self.phi_max > self.phi_min:
            raise ConfigError("phi_max must exceed phi_min")
        if not self.r_max > 0:
            raise ConfigError("r_max must be positive")

    @property
    def d_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.H

    @property
    def d_phi(self) -> float:
        return (self.phi_max - self.phi_min) / self.W

    def scaled(self, H: int | None = None, W: int | None = None) -> "ProjectionConfig":
        return replace(self, H=self.H if H is None else H, W=self.W if W is None else W)

    def row_elevation(self, row) -> np.ndarray:
        """Elevation angle at the center of ``row``."""
        row = np.asarray(row, dtype=np.float64)
        return self.theta_min + (self.H - 1 - row + 0.5) * self.d_theta

    def col_azimuth(self, col) -> np.ndarray:
        col = np.asarray(col, dtype=np.float64)
        return self.phi_min + (col + 0.5) * self.d_phi


@dataclass(frozen=True)
class RangeImage:
    """Dense projected frame.

    ``channels`` is stored channel-first as ``(K, H, W)`` float32 planes so it
    can be fed to the network without a transpose; ``cell_point`` is ``(H, W)``
    int64 with -1 for empty cells.
    """

    channels: np.ndarray
    cell_point: np.ndarray
    config: ProjectionConfig = field(default_factory=ProjectionConfig)
    channel_names: tuple = CHANNELS_3

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.float32)
        cp = np.ascontiguousarray(self.cell_point, dtype=np.int64)
        if ch.ndim != 3 or cp.shape != ch.shape[1:]:
            raise ShapeMismatchError(f"channels {ch.shape} vs cell_point {cp.shape}")
        if len(self.channel_names) != ch.shape[0]:
            raise ShapeMismatchError(
                f"{ch.shape[0]} channel planes but names {self.channel_names}")
        ch.setflags(write=False)
        cp.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "cell_point", cp)

    @property
    def K(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self) -> tuple:
        return self.channels.shape[1:]

    def plane(self, name: str) -> np.ndarray:
        return self.channels[self.channel_names.index(name)]

    @property
    def occupancy(self) -> np.ndarray:
        return self.plane("occupancy")

    @property
    def range(self) -> np.ndarray:
        return self.plane("range")

    def metric_range(self) -> np.ndarray:
        """Range plane in meters (clipped at ``r_max`` by construction)."""
        return self.range.astype(np.float64) * self.config.r_max


# ---------------------------------------------------------------------------
# projection


def project_points(xyz: np.ndarray, cfg: ProjectionConfig):
    """Vectorized projection.

    Returns ``(rows, cols, ranges, valid)`` for an ``(N, 3)`` array.  Points on
    the z axis or outside the half-open field of view are marked invalid.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    rho = np.hypot(x, y)
    ranges = np.sqrt(rho * rho + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.arctan(z / rho)
    phi = np.arctan2(y, x)
    valid = (
        (rho > 0)
        & (theta >= cfg.theta_min) & (theta < cfg.theta_max)
        & (phi >= cfg.phi_min) & (phi < cfg.phi_max)
    )
    col = np.floor((phi - cfg.phi_min) * cfg.W / (cfg.phi_max - cfg.phi_min))
    tbin = np.floor((theta - cfg.theta_min) * cfg.H / (cfg.theta_max - cfg.theta_min))
    col = np.clip(np.where(valid, col, 0), 0, cfg.W - 1).astype(np.int64)
    tbin = np.clip(np.where(valid, tbin, 0), 0, cfg.H - 1).astype(np.int64)
    rows = cfg.H - 1 - tbin
    return rows, col, ranges, valid


def project_point(p: Point, cfg: ProjectionConfig):
    """Grid cell and range of one point, or ``None`` outside the field of view."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if x == 0.0 and y == 0.0:
        raise DegenerateOriginError(f"point ({x}, {y}, {z}) lies on the sensor axis")
    rows, cols, ranges, valid = project_points(np.array([[x, y, z]]), cfg)
    if not valid[0]:
        return None
    return int(rows[0]), int(cols[0]), float(ranges[0])


def encode_frame(cloud: PointCloud, labels=None, cfg: ProjectionConfig | None = None,
                 channels: tuple = CHANNELS_3):
    """Project ``cloud`` into a :class:`RangeImage` (and a label raster if ``labels``).

    When several points land in one cell the one with the smaller range is
    kept; exact range ties keep the lower point index.
    """
    cfg = cfg or ProjectionConfig()
    unknown = set(channels) - set(CHANNELS_3)
    if unknown or "occupancy" not in channels or "range" not in channels:
        raise ConfigError(f"unsupported channel layout {channels}")
    n = len(cloud)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ShapeMismatchError(f"{labels.shape[0]} labels for {n} points")

    H, W = cfg.H, cfg.W
    planes = np.zeros((len(channels), H, W), dtype=np.float32)
    cell_point = np.full((H, W), -1, dtype=np.int64)
    raster = np.zeros((H, W), dtype=np.uint8) if labels is not None else None

    rows, cols, ranges, valid = project_points(cloud.xyz, cfg)
    idx = np.flatnonzero(valid)
    if idx.size:
        flat = rows[idx] * W + cols[idx]
        # lexsort is stable: ties in (cell, range) fall back to index order
        order = np.lexsort((ranges[idx], flat))
        flat_sorted = flat[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        keep = idx[order[first]]
        cells = flat_sorted[first]

        values = {
            "intensity": cloud.intensity[keep],
            "range": np.minimum(ranges[keep], cfg.r_max) / cfg.r_max,
            "occupancy": np.ones(keep.size),
        }
        for k, name in enumerate(channels):
            planes[k].reshape(-1)[cells] = values[name]
        cell_point.reshape(-1)[cells] = keep
        if raster is not None:
            raster.reshape(-1)[cells] = labels[keep]

    img = RangeImage(planes, cell_point, cfg, tuple(channels))
    return img, raster


def hflip(img: RangeImage, raster=None):
    """Mirror columns of every channel, the provenance plane and ``raster``."""
    flipped = RangeImage(img.channels[:, :, ::-1], img.cell_point[:, ::-1],
                         img.config, img.channel_names)
    if raster is None:
        return flipped, None
    return flipped, np.ascontiguousarray(np.asarray(raster)[:, ::-1])


# ---------------------------------------------------------------------------
# RIMG serialization


def range_image_to_bytes(img: RangeImage) -> bytes:
    K, (H, W) = img.K, img.shape
    return (_RIMG_HEADER.pack(RIMG_MAGIC, H, W, K)
            + img.channels.astype("<f4").tobytes()
            + img.cell_point.astype("<i8").tobytes())


def range_image_from_bytes(payload: bytes, cfg: ProjectionConfig | None = None) -> RangeImage:
    if len(payload) < _RIMG_HEADER.size:
        raise SizeMismatchError("range image file has no header")
    magic, H, W, K = _RIMG_HEADER.unpack_from(payload)
    if magic != RIMG_MAGIC:
        raise BadMagicError(f"expected magic {RIMG_MAGIC!r}, found {magic!r}")
    if K == 3:
        names = CHANNELS_3
    elif K == 2:
        names = CHANNELS_2
    else:
        raise DataError(f"unsupported channel count {K}")
    n_planes = K * H * W * 4
    expected = _RIMG_HEADER.size + n_planes + H * W * 8
    if len(payload) != expected:
        raise SizeMismatchError(f"range image {K}x{H}x{W} needs {expected} bytes, found {len(payload)}")
    off = _RIMG_HEADER.size
    planes = np.frombuffer(payload, dtype="<f4", count=K * H * W, offset=off).reshape(K, H, W)
    cells = np.frombuffer(payload, dtype="<i8", count=H * W, offset=off + n_planes).reshape(H, W)
    if cfg is None:
        cfg = ProjectionConfig(H=H, W=W)
    elif (cfg.H, cfg.W) != (H, W):
        raise ConfigError(f"file grid {H}x{W} does not match config {cfg.H}x{cfg.W}")
    return RangeImage(planes.astype(np.float32), cells.astype(np.int64), cfg, names)


def save_range_image(path, img: RangeImage) -> None:
    atomic_write_bytes(path, range_image_to_bytes(img))


def load_range_image(path, cfg: ProjectionConfig | None = None) -> RangeImage:
    try:
        return range_image_from_bytes(Path(path).read_bytes(), cfg)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None
