import numpy as np
import pytest

from rangeseg.errors import ConfigError
from rangeseg.net import NetConfig, RangeAwareNet, crop_top_band, logits_to_raster
from rangeseg.nn import tensor as F
from rangeseg.nn.tensor import Tensor


def small_cfg(H=32, W=16, **kw):
    base = dict(stage_channels=(4, 4, 4, 4), blocks_per_stage=(1, 1, 1, 1), decoder_channels=4)
    base.update(kw)
    return NetConfig.default("MiniLaserNet", H, W, **base)


def rand_input(cfg, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((cfg.in_channels, cfg.H, cfg.W)))


def test_full_size_output_shape():
    cfg = NetConfig.default("MiniLaserNet", 64, 512)
    net = RangeAwareNet(cfg)
    net.eval()
    with F.no_grad():
        fused, heavy, light = net(Tensor(np.zeros((3, 64, 512), np.float32)))
    assert fused.shape == (4, 64, 512)
    assert light.shape == (4, 64, 512)
    assert heavy.shape == (4, 16, 512)


@pytest.mark.parametrize("channels", [2, 3])
def test_output_matches_input_grid(channels):
    cfg = small_cfg(H=32, W=128, in_channels=channels, top_rows=8)
    fused, heavy, light = RangeAwareNet(cfg, dtype=np.float64)(rand_input(cfg))
    assert fused.shape == (4, 32, 128)
    assert heavy.shape == (4, 8, 128)


def test_wrong_input_rejected():
    cfg = small_cfg()
    with pytest.raises(ConfigError):
        RangeAwareNet(cfg)(np.zeros((2, cfg.H, cfg.W)))


def test_crop_top_band_rows():
    feat = Tensor(np.arange(32.0).reshape(1, 32, 1))
    assert crop_top_band(feat, 16, 2).shape == (1, 8, 1)
    assert crop_top_band(feat, 16, 4).shape == (1, 4, 1)
    assert crop_top_band(feat, 16, 32).shape == (1, 1, 1)
    assert np.array_equal(crop_top_band(feat, 16, 2).data.ravel(), np.arange(8.0))


def test_config_validation():
    with pytest.raises(ConfigError):
        NetConfig.default("VGG")
    with pytest.raises(ConfigError):
        NetConfig.default(H=60)
    with pytest.raises(ConfigError):
        NetConfig.default(top_rows=7)
    with pytest.raises(ConfigError):
        NetConfig.default(vertical_strides=(1, 3, 2, 2))


def test_config_text_round_trip():
    cfg = NetConfig.default("MiniResNet", 64, 256, decoder_channels=24, in_channels=2)
    assert NetConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        NetConfig.from_text("bogus = 3\n")


def test_delta_is_one():
    assert NetConfig.default().delta == 1


def test_backbone_sizes_ordered():
    laser = RangeAwareNet(NetConfig.default("MiniLaserNet")).num_parameters()
    resnet = RangeAwareNet(NetConfig.default("MiniResNet")).num_parameters()
    assert laser < resnet


def _heavy_grads_below(cfg, first_row, seed=0):
    net = RangeAwareNet(cfg, seed=seed, dtype=np.float64)
    fused, _, _ = net(rand_input(cfg, seed))
    w = np.zeros(fused.shape)
    w[:, first_row:] = np.random.default_rng(seed + 1).standard_normal(w[:, first_row:].shape)
    F.weighted_sum(fused, w).backward()
    return [(name, p.grad) for name, p in net.heavy_parameters()], net


@pytest.mark.parametrize("channels", [2, 3])
def test_heavy_decoder_is_local_to_top_band(channels):
    cfg = small_cfg(H=32, W=16, in_channels=channels, top_rows=8)
    grads, _ = _heavy_grads_below(cfg, cfg.top_rows + cfg.delta)
    for name, g in grads:
        assert g is None or not np.any(g), name


def test_heavy_decoder_does_reach_top_band():
    cfg = small_cfg(H=32, W=16, top_rows=8)
    grads, _ = _heavy_grads_below(cfg, 0)
    assert any(g is not None and np.any(g) for name, g in grads if name.startswith("heavy."))


def test_logits_to_raster_ties_and_mask():
    logits = np.zeros((4, 2, 2))
    logits[2, 0, 0] = 1.0
    logits[1, 1, 1] = logits[3, 1, 1] = 2.0
    occ = np.array([[1, 0], [1, 1]])
    assert logits_to_raster(logits, occ).tolist() == [[2, 0], [0, 1]]


def test_predict_restores_training_mode_and_masks():
    from rangeseg.projection import ProjectionConfig, RangeImage
    cfg = small_cfg(H=32, W=16)
    net = RangeAwareNet(cfg)
    chans = np.random.default_rng(0).standard_normal((3, 32, 16)).astype(np.float32)
    chans[2] = 0
    chans[2, :4] = 1
    img = RangeImage(chans, np.full((32, 16), -1, np.int64), ProjectionConfig(H=32, W=16))
    raster = net.predict(img)
    assert net.training
    assert not raster[4:].any()
