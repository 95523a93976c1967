"""Binary PGM (P5) / PPM (P6) writers and the raster palettes used by the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from rangeseg._atomic import atomic_write_bytes

# background, car, pedestrian, cyclist
CLASS_PALETTE = np.array(
    [[0, 0, 0], [245, 150, 100], [30, 30, 255], [255, 40, 200]], dtype=np.uint8)
# grayscale levels for class rasters written as PGM
CLASS_GRAY = np.array([0, 85, 170, 255], dtype=np.uint8)


def pgm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {img.shape}")
    if img.dtype == np.uint16:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode()
        return header + img.astype(">u2").tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    return header + img.astype(np.uint8).tobytes()


def ppm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {img.shape}")
    return f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + img.tobytes()


def write_pgm(path, img) -> None:
    atomic_write_bytes(path, pgm_bytes(img))


def write_ppm(path, img) -> None:
    atomic_write_bytes(path, ppm_bytes(img))


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    channels = 3 if magic == b"P6" else 1
    arr = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=pos)
    return arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)


def class_gray(raster: np.ndarray) -> np.ndarray:
    raster = np.asarray(raster)
    return CLASS_GRAY[np.clip(raster, 0, len(CLASS_GRAY) - 1)]


def class_rgb(raster: np.ndarray) -> np.ndarray:
    raster = np.asarray(raster)
    return CLASS_PALETTE[np.clip(raster, 0, len(CLASS_PALETTE) - 1)]


def range_gray(normalized_range: np.ndarray, occupancy=None) -> np.ndarray:
    """Near returns bright, far returns dark, empty cells black."""
    r = np.clip(np.asarray(normalized_range, dtype=np.float64), 0.0, 1.0)
    img = np.round(255 * (1.0 - r)).astype(np.uint8)
    if occupancy is not None:
        img[np.asarray(occupancy) <= 0] = 0
    return img


def bev_occupancy(xyz: np.ndarray, extent: float = 40.0, resolution: float = 0.1) -> np.ndarray:
    """Bird's-eye occupancy raster centred on the sensor; +x up, +y left."""
    n = int(round(2 * extent / resolution))
    img = np.zeros((n, n), dtype=np.uint8)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    row = np.floor((extent - xyz[:, 0]) / resolution).astype(np.int64)
    col = np.floor((extent - xyz[:, 1]) / resolution).astype(np.int64)
    ok = (row >= 0) & (row < n) & (col >= 0) & (col < n)
    img[row[ok], col[ok]] = 255
    return img
