import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeseg.errors import (
    BadMagicError,
    DataError,
    IntensityRangeError,
    NonFiniteValueError,
    SizeMismatchError,
    TruncatedFileError,
)
from rangeseg.pointcloud_io import (
    BoxLabel,
    PointCloud,
    decode_kitti_bytes,
    label_points,
    load_boxes,
    load_instance_raster,
    load_kitti_bin,
    load_point_labels,
    load_raster,
    raster_from_bytes,
    raster_to_bytes,
    save_boxes,
    save_instance_raster,
    save_kitti_bin,
    save_point_labels,
    save_raster,
)


def random_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(-80, 80, size=(n, 3))
    return PointCloud(np.column_stack([xyz, rng.random(n)]).astype(np.float32))


def test_empty_file_gives_empty_cloud(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    cloud = load_kitti_bin(path)
    assert len(cloud) == 0
    assert cloud.points.shape == (0, 4)


def test_single_point_decodes():
    cloud = decode_kitti_bytes(struct.pack("<4f", 1.0, 0.0, 0.0, 0.5))
    assert len(cloud) == 1
    assert cloud.point(0) == (1.0, 0.0, 0.0, 0.5)


def test_100k_points_round_trip_byte_identical(tmp_path):
    src = tmp_path / "a.bin"
    dst = tmp_path / "b.bin"
    payload = random_cloud(100_000, seed=3).points.tobytes()
    src.write_bytes(payload)
    save_kitti_bin(dst, load_kitti_bin(src))
    assert dst.read_bytes() == payload


def test_point_order_preserved():
    cloud = random_cloud(50, seed=1)
    again = decode_kitti_bytes(cloud.points.tobytes())
    assert np.array_equal(again.points, cloud.points)


@pytest.mark.parametrize("nbytes", [1, 15, 17, 33])
def test_truncated_file_rejected(tmp_path, nbytes):
    path = tmp_path / "t.bin"
    path.write_bytes(b"\0" * nbytes)
    with pytest.raises(TruncatedFileError, match="t.bin"):
        load_kitti_bin(path)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(NonFiniteValueError):
        decode_kitti_bytes(struct.pack("<8f", 1, 2, 3, 0.1, 4, bad, 6, 0.2))


def test_intensity_outside_unit_interval_rejected():
    with pytest.raises(IntensityRangeError):
        decode_kitti_bytes(struct.pack("<4f", 1, 2, 3, 17.0))


def test_cloud_is_read_only():
    cloud = random_cloud(5)
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 1.0


# ---------------------------------------------------------------------------
# boxes


def test_point_at_box_center_gets_box_class():
    box = BoxLabel(2, (5.0, -1.0, 0.3), (1.0, 1.0, 1.8), 0.7)
    cloud = PointCloud.from_points([(5.0, -1.0, 0.3, 0.2)])
    assert label_points(cloud, [box]).tolist() == [2]


def test_point_outside_half_length_is_background():
    box = BoxLabel(1, (0, 0, 0), (1, 1, 1), 0.0)
    cloud = PointCloud.from_points([(0.51, 0, 0, 0)])
    assert label_points(cloud, [box]).tolist() == [0]


def test_rotated_box_containment():
    # rotating (0.9, 1.9) by -pi/2 gives local coordinates (1.9, -0.9)
    box = BoxLabel(1, (0, 0, 0), (4, 2, 2), math.pi / 2)
    assert box.contains(np.array([[0.9, 1.9, 0.0]])).tolist() == [True]
    assert box.contains(np.array([[1.9, 0.9, 0.0]])).tolist() == [False]


def test_empty_box_list_all_background():
    assert not label_points(random_cloud(100), []).any()


def test_box_validation():
    with pytest.raises(DataError):
        BoxLabel(0, (0, 0, 0), (1, 1, 1))
    with pytest.raises(DataError):
        BoxLabel(1, (0, 0, 0), (1, 0, 1))


@settings(max_examples=200, deadline=None)
@given(yaw=st.floats(-10, 10), k=st.integers(-3, 3),
       px=st.floats(-3, 3), py=st.floats(-3, 3), pz=st.floats(-1.5, 1.5))
def test_containment_invariant_under_full_turns(yaw, k, px, py, pz):
    a = BoxLabel(1, (0.5, -0.2, 0.1), (3.0, 1.6, 1.5), yaw)
    b = BoxLabel(1, (0.5, -0.2, 0.1), (3.0, 1.6, 1.5), yaw + 2 * math.pi * k)
    p = np.array([[px, py, pz]])
    # local coordinates agree to far better than 1e-6 m; only points that close
    # to a face could legitimately flip
    d = p[0] - np.array(a.center)
    c, s = math.cos(yaw), math.sin(yaw)
    lx, ly = c * d[0] + s * d[1], -s * d[0] + c * d[1]
    near_face = min(abs(abs(lx) - 1.5), abs(abs(ly) - 0.8), abs(abs(d[2]) - 0.75)) < 1e-6
    if not near_face:
        assert a.contains(p)[0] == b.contains(p)[0]


def test_box_order_matters_only_in_overlaps():
    rng = np.random.default_rng(4)
    boxes = [BoxLabel(1, (0, 0, 0), (4, 2, 2), 0.3), BoxLabel(2, (1.5, 0.5, 0), (1, 1, 2), 0.0),
             BoxLabel(3, (-5, 0, 0), (2, 2, 2), 1.0)]
    cloud = PointCloud(np.column_stack([rng.uniform(-7, 4, (5000, 3)), rng.random(5000)]))
    fwd = label_points(cloud, boxes)
    rev = label_points(cloud, boxes[::-1])
    inside = np.stack([b.contains(cloud.xyz) for b in boxes]).sum(axis=0)
    assert np.array_equal(fwd[inside < 2], rev[inside < 2])
    assert (fwd[inside >= 2] != rev[inside >= 2]).any()


def test_boxes_jsonl_round_trip(tmp_path):
    boxes = [BoxLabel(1, (1.0, 2.0, -1.0), (4.0, 1.7, 1.5), 0.25), BoxLabel(3, (9, -3, -1), (1.8, 0.6, 1.7), -2.0)]
    save_boxes(tmp_path / "b.jsonl", boxes)
    assert load_boxes(tmp_path / "b.jsonl") == boxes


def test_boxes_accept_class_names(tmp_path):
    (tmp_path / "b.jsonl").write_text('{"class": "pedestrian", "cx": 1, "cy": 0, "cz": 0, '
                                      '"l": 0.6, "w": 0.6, "h": 1.8, "yaw": 0}\n')
    assert load_boxes(tmp_path / "b.jsonl")[0].class_id == 2


# ---------------------------------------------------------------------------
# rasters and per-point labels


def test_one_cell_raster_is_13_bytes():
    payload = raster_to_bytes(np.array([[3]], dtype=np.uint8))
    assert len(payload) == 13
    assert payload[:4] == b"RSEG"
    assert payload[-1] == 3


def test_raster_round_trip(tmp_path):
    raster = np.random.default_rng(0).integers(0, 4, (64, 512)).astype(np.uint8)
    save_raster(tmp_path / "r.rseg", raster)
    again = load_raster(tmp_path / "r.rseg")
    assert np.array_equal(again, raster)
    assert raster_to_bytes(again) == (tmp_path / "r.rseg").read_bytes()


def test_bad_magic_rejected():
    payload = b"XXXX" + raster_to_bytes(np.zeros((2, 2), np.uint8))[4:]
    with pytest.raises(BadMagicError):
        raster_from_bytes(payload)


def test_raster_size_mismatch_rejected(tmp_path):
    payload = raster_to_bytes(np.zeros((2, 3), np.uint8))
    with pytest.raises(SizeMismatchError):
        raster_from_bytes(payload[:-1])
    with pytest.raises(SizeMismatchError):
        raster_from_bytes(payload + b"\0")
    with pytest.raises(SizeMismatchError):
        raster_from_bytes(payload[:6])


def test_instance_raster_round_trip(tmp_path):
    raster = np.random.default_rng(1).integers(0, 70000, (8, 16)).clip(0, 65535).astype(np.uint16)
    save_instance_raster(tmp_path / "i.rsg2", raster)
    payload = (tmp_path / "i.rsg2").read_bytes()
    assert payload[:4] == b"RSG2"
    assert np.array_equal(load_instance_raster(tmp_path / "i.rsg2"), raster)


def test_point_labels_round_trip(tmp_path):
    labels = np.random.default_rng(2).integers(0, 4, 1000).astype(np.uint8)
    save_point_labels(tmp_path / "l.label", labels)
    assert np.array_equal(load_point_labels(tmp_path / "l.label", expected=1000), labels)
    with pytest.raises(SizeMismatchError):
        load_point_labels(tmp_path / "l.label", expected=999)
