"""End-to-end helpers shared by the CLI and the benchmark."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from rangeseg.clustering import DbscanParams, apply_instances, cluster_frame
from rangeseg.errors import ConfigError, DataError, EmptyBenchmarkError, SizeMismatchError
from rangeseg.evaluation import BenchResult, benchmark
from rangeseg.net import NetConfig, RangeAwareNet, logits_to_raster
from rangeseg.nn import no_grad
from rangeseg.nn.checkpoint import load_state_into, state_from_bytes
from rangeseg.pointcloud_io import load_raster
from rangeseg.projection import CHANNELS_2, CHANNELS_3, ProjectionConfig, encode_frame, load_range_image

STAGES = ("encode", "forward", "cluster")


def channel_names(k: int) -> tuple:
    if k == 3:
        return CHANNELS_3
    if k == 2:
        return CHANNELS_2
    raise ConfigError(f"input channels must be 2 or 3, got {k}")


def net_for_image(img, net_cfg: NetConfig | None = None, seed: int = 0) -> RangeAwareNet:
    """Network matching ``img``; a given config must agree with its shape and channels."""
    if net_cfg is None:
        net_cfg = NetConfig.default("MiniLaserNet", img.config.H, img.config.W, in_channels=img.K)
    if (net_cfg.in_channels, net_cfg.H, net_cfg.W) != (img.K, *img.shape):
        raise SizeMismatchError(
            f"network expects {net_cfg.in_channels}x{net_cfg.H}x{net_cfg.W} input, "
            f"image is {img.K}x{img.shape[0]}x{img.shape[1]}")
    return RangeAwareNet(net_cfg, seed=seed)


def load_weights(net: RangeAwareNet, payload: bytes) -> RangeAwareNet:
    load_state_into(net, state_from_bytes(payload))
    return net


def predict(net: RangeAwareNet, img) -> np.ndarray:
    """Semantic raster for one range image (empty cells stay background)."""
    return net.predict(img)


def load_dataset(directory) -> list:
    """``(RangeImage, raster)`` pairs for every ``*.rimg`` with a sibling ``*.rseg``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    pairs = []
    for rimg in sorted(directory.glob("*.rimg")):
        rseg = rimg.with_suffix(".rseg")
        if not rseg.exists():
            raise DataError(f"{rseg}: missing label raster for {rimg.name}")
        img = load_range_image(rimg)
        raster = load_raster(rseg)
        if raster.shape != img.shape:
            raise SizeMismatchError(f"{rseg}: raster {raster.shape} vs image {img.shape}")
        pairs.append((img, raster))
    if not pairs:
        raise DataError(f"{directory}: no .rimg/.rseg pairs found")
    return pairs


def segment_and_cluster(net, img, cloud, params: DbscanParams = DbscanParams()):
    """Semantic raster, instance labeling, instance raster and cleaned raster."""
    raster = predict(net, img)
    labeling = cluster_frame(img, raster, cloud, params)
    inst, cleaned = apply_instances(raster, img, labeling)
    return raster, labeling, inst, cleaned


def benchmark_stage(stage: str, frames, cfg: ProjectionConfig, repetitions: int = 5,
                    warmup: int = 3, net: RangeAwareNet | None = None,
                    params: DbscanParams = DbscanParams()) -> BenchResult:
    """Per-frame timing of one pipeline stage on synthetic frames.

    ``encode`` times projection of the raw cloud, ``forward`` a network
    inference on the encoded image and ``cluster`` DBSCAN on the ground-truth
    foreground.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    frames = list(frames)
    if not frames:
        raise EmptyBenchmarkError("benchmark needs at least one frame")
    if stage == "encode":
        return benchmark(lambda fr: encode_frame(fr.cloud, None, cfg), frames,
                         repetitions, warmup, stage)
    encoded = [(fr, *encode_frame(fr.cloud, fr.labels, cfg)) for fr in frames]
    if stage == "forward":
        if net is None:
            net = net_for_image(encoded[0][1])
        net.eval()

        def run(item):
            with no_grad():
                fused, _, _ = net(item[1])
            return logits_to_raster(fused.data, item[1].occupancy)

        return benchmark(run, encoded, repetitions, warmup, stage)
    return benchmark(lambda item: cluster_frame(item[1], item[2], item[0].cloud, params),
                     encoded, repetitions, warmup, stage)
