"""
Simplified fog model and the near-range defog filter.

Fog limits LiDAR detection to half the visibility distance, turns some beams
into spurious returns within about 2 m of the sensor and dims every
reflection.  The false-alarm rate and attenuation factor are free knobs of
this model, not measured quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rangeseg.errors import ConfigError
from rangeseg.pointcloud_io import PointCloud
from rangeseg.projection import CHANNELS_2, ProjectionConfig, encode_frame

DEFOG_RANGE = 2.0
FALSE_ALARM_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class FogParams:
    visibility: float = 70.0
    false_alarm_rate: float = 0.05
    intensity_attenuation: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not self.visibility > 0:
            raise ConfigError("visibility must be positive")
        if not 0 <= self.false_alarm_rate <= 1:
            raise ConfigError("false_alarm_rate must lie in [0, 1]")
        if not 0 <= self.intensity_attenuation <= 1:
            raise ConfigError("intensity_attenuation must lie in [0, 1]")

    @property
    def detection_range(self) -> float:
        return self.visibility / 2


def fog_simulate_indexed(cloud: PointCloud, params: FogParams):
    """Fogged cloud plus, per output point, its source index and a false-alarm flag."""
    rng = np.random.default_rng(params.seed)
    n = len(cloud)
    xyz = cloud.xyz.astype(np.float64)
    ranges = cloud.ranges()
    false_alarm = rng.random(n) < params.false_alarm_rate
    near = rng.uniform(*FALSE_ALARM_RANGE, size=n)
    keep = false_alarm | (ranges <= params.detection_range)
    # a false alarm needs a direction; beams along the exact origin have none
    keep &= ~(false_alarm & (ranges == 0))
    idx = np.flatnonzero(keep)

    out_xyz = xyz[idx].copy()
    fa = false_alarm[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = out_xyz[fa] / ranges[idx][fa][:, None]
    out_xyz[fa] = unit * near[idx][fa][:, None]
    intensity = np.clip(cloud.intensity[idx].astype(np.float64) * params.intensity_attenuation, 0, 1)
    pts = np.column_stack([out_xyz, intensity]).astype(np.float32)
    return PointCloud(pts, cloud.frame_id), idx, fa


def fog_simulate(cloud: PointCloud, params: FogParams) -> PointCloud:
    """Apply the visibility cutoff, near false alarms and intensity attenuation."""
    return fog_simulate_indexed(cloud, params)[0]


def fog_labels(labels, source_index, false_alarm) -> np.ndarray:
    """Carry per-point labels through the fog model; false alarms become background."""
    out = np.asarray(labels)[source_index].copy()
    out[false_alarm] = 0
    return out


def defog_mask(cloud: PointCloud, min_range: float = DEFOG_RANGE) -> np.ndarray:
    return cloud.ranges() >= min_range


def defog(cloud: PointCloud, min_range: float = DEFOG_RANGE) -> PointCloud:
    """Keep exactly the points at ``min_range`` meters or farther."""
    return cloud.subset(defog_mask(cloud, min_range))


def encode_2ch(cloud: PointCloud, cfg: ProjectionConfig | None = None):
    """Intensity-free encoding with ``(range, occupancy)`` planes."""
    return encode_frame(cloud, None, cfg, CHANNELS_2)[0]


def no_fog() -> FogParams:
    return FogParams(visibility=math.inf, false_alarm_rate=0.0, intensity_attenuation=1.0)
