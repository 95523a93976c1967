import math

import numpy as np
import pytest

from rangeseg.errors import ConfigError
from rangeseg.fog import FogParams, defog, encode_2ch, fog_labels, fog_simulate, fog_simulate_indexed, no_fog
from rangeseg.net import NetConfig, RangeAwareNet
from rangeseg.nn import no_grad
from rangeseg.pointcloud_io import PointCloud
from rangeseg.projection import encode_frame
from rangeseg.synthetic import generate_frames, training_config


def frame_cloud(seed=0):
    cfg = training_config(256)
    return generate_frames(1, seed, cfg)[0], cfg


def test_visibility_cuts_true_points():
    fr, _ = frame_cloud()
    assert fr.cloud.ranges().max() > 35
    fogged, idx, fa = fog_simulate_indexed(fr.cloud, FogParams(visibility=70, seed=1))
    assert fogged.ranges()[~fa].max() <= 35.0
    assert np.all(fogged.ranges()[fa] <= 2.0 + 1e-5) and np.all(fogged.ranges()[fa] >= 0.5 - 1e-5)


def test_false_alarms_follow_beam_direction():
    fr, _ = frame_cloud()
    fogged, idx, fa = fog_simulate_indexed(fr.cloud, FogParams(false_alarm_rate=0.3, seed=2))
    src = fr.cloud.xyz[idx[fa]].astype(np.float64)
    out = fogged.xyz[fa].astype(np.float64)
    cos = np.einsum("ij,ij->i", src, out) / (np.linalg.norm(src, axis=1) * np.linalg.norm(out, axis=1))
    assert fa.sum() > 0 and np.all(cos > 1 - 1e-6)


def test_no_fog_is_identity():
    fr, _ = frame_cloud()
    assert np.array_equal(fog_simulate(fr.cloud, no_fog()).points, fr.cloud.points)


def test_deterministic_for_seed():
    fr, _ = frame_cloud()
    a = fog_simulate(fr.cloud, FogParams(seed=7))
    b = fog_simulate(fr.cloud, FogParams(seed=7))
    c = fog_simulate(fr.cloud, FogParams(seed=8))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_fog_never_adds_points_or_intensity():
    fr, _ = frame_cloud()
    fogged, idx, _ = fog_simulate_indexed(fr.cloud, FogParams(intensity_attenuation=0.5))
    assert len(fogged) <= len(fr.cloud)
    assert np.all(fogged.intensity <= fr.cloud.intensity[idx] + 1e-7)


def test_fog_labels_mark_false_alarms_background():
    fr, _ = frame_cloud()
    fogged, idx, fa = fog_simulate_indexed(fr.cloud, FogParams(false_alarm_rate=0.2, seed=3))
    lab = fog_labels(fr.labels, idx, fa)
    assert lab.shape == (len(fogged),)
    assert not lab[fa].any()
    assert np.array_equal(lab[~fa], fr.labels[idx[~fa]])


def test_params_validation():
    for kw in (dict(visibility=0), dict(false_alarm_rate=1.5), dict(intensity_attenuation=-0.1)):
        with pytest.raises(ConfigError):
            FogParams(**kw)


def cloud_at_ranges(ranges):
    pts = np.zeros((len(ranges), 4), np.float32)
    pts[:, 0] = ranges
    return PointCloud(pts)


def test_defog_examples():
    assert len(defog(cloud_at_ranges([1.5]))) == 0
    assert len(defog(cloud_at_ranges([10.0]))) == 1
    assert len(defog(cloud_at_ranges([2.0]))) == 1


def test_defog_after_fog_has_no_near_points():
    fr, _ = frame_cloud()
    fogged = fog_simulate(fr.cloud, FogParams(false_alarm_rate=0.3, seed=4))
    cleaned = defog(fogged)
    assert cleaned.ranges().size and np.all(cleaned.ranges() >= 2.0)
    once = defog(fogged)
    assert np.array_equal(defog(once).points, once.points)
    kept = {tuple(p) for p in fogged.points.tolist()}
    assert all(tuple(p) in kept for p in cleaned.points.tolist())


def test_two_channel_encoding_matches_three_channel_planes():
    fr, cfg = frame_cloud()
    img2 = encode_2ch(fr.cloud, cfg)
    img3, _ = encode_frame(fr.cloud, None, cfg)
    assert img2.K == 2
    assert np.array_equal(img2.range, img3.range)
    assert np.array_equal(img2.occupancy, img3.occupancy)


def test_two_channel_network_accepts_encoding():
    fr, cfg = frame_cloud()
    img = encode_2ch(fr.cloud, cfg)
    net = RangeAwareNet(NetConfig.default("MiniLaserNet", cfg.H, cfg.W, in_channels=2,
                                          stage_channels=(4, 4, 4, 4), blocks_per_stage=(1, 1, 1, 1),
                                          decoder_channels=4))
    net.eval()
    with no_grad():
        fused, _, _ = net(img)
    assert fused.shape == (4, cfg.H, cfg.W)
    assert math.isfinite(float(np.abs(fused.data).sum()))
