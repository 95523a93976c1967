"""
Range-aware segmentation network.

A shared residual encoder feeds two decoders:

* the *heavy* decoder sees only the top band of every encoder scale (where
  far, small objects appear) and densely concatenates every block output of
  that scale with the upsampled deeper aggregate;
* the *light* decoder covers the full image with a single skip concatenation
  per level.

Both decoders stop at vertical stride 2.  The fusion layer concatenates the
heavy output with the matching top rows of the light output, maps the result
back to the decoder width with a 1x1 conv, stacks it on top of the light
bottom band along the height axis and restores full resolution with a
transpose conv.  All striding is vertical only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import List

import numpy as np

from rangeseg import config as kv
from rangeseg.errors import ConfigError
from rangeseg.nn import tensor as F
from rangeseg.nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvBNReLU,
    ConvTranspose2d,
    Module,
    UpBNReLU,
)
from rangeseg.nn.tensor import Tensor

VARIANTS = ("MiniResNet", "MiniLaserNet")
FINAL_KERNEL_H = 2

_DEFAULTS = {
    "MiniResNet": dict(stage_channels=(16, 32, 64, 128), blocks_per_stage=(2, 2, 2, 2)),
    "MiniLaserNet": dict(stage_channels=(8, 16, 32, 64), blocks_per_stage=(2, 3, 5, 3)),
}


@dataclass(frozen=True)
class NetConfig:
    variant: str = "MiniLaserNet"
    stage_channels: tuple = (8, 16, 32, 64)
    blocks_per_stage: tuple = (2, 3, 5, 3)
    vertical_strides: tuple = (1, 2, 2, 2)
    top_rows: int = 16
    num_classes: int = 4
    in_channels: int = 3
    decoder_channels: int = 32
    H: int = 64
    W: int = 512

    @classmethod
    def default(cls, variant: str = "MiniLaserNet", H: int = 64, W: int = 512, **overrides):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown backbone variant {variant!r}")
        base = dict(_DEFAULTS[variant], variant=variant, H=H, W=W, top_rows=max(2, H // 4))
        base.update(overrides)
        return cls(**base)

    def __post_init__(self):
        for name in ("stage_channels", "blocks_per_stage", "vertical_strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown backbone variant {self.variant!r}")
        n = len(self.stage_channels)
        if n == 0 or len(self.blocks_per_stage) != n or len(self.vertical_strides) != n:
            raise ConfigError("channels, blocks and strides must have one entry per stage")
        if min(self.blocks_per_stage) < 1 or min(self.stage_channels) < 1:
            raise ConfigError("every stage needs at least one block and one channel")
        if any(s not in (1, 2) for s in self.vertical_strides):
            raise ConfigError("vertical strides must be 1 or 2")
        total = int(np.prod(self.vertical_strides))
        if self.H % total:
            raise ConfigError(f"product of vertical strides {total} must divide H={self.H}")
        if 2 not in self.cumulative_strides:
            raise ConfigError("one encoder stage must sit at cumulative vertical stride 2")
        if self.top_rows % 2 or not 2 <= self.top_rows < self.H:
            raise ConfigError(f"top_rows must be even and within [2, H), got {self.top_rows}")
        if self.num_classes < 2 or self.in_channels < 1 or self.decoder_channels < 1:
            raise ConfigError("need at least two classes, one input and one decoder channel")
        # heavy decoder upsampling must always cover the next band
        rows = band_rows(self.top_rows, self.cumulative_strides[-1])
        for k in range(n - 2, self.output_stage - 1, -1):
            up = rows * self.vertical_strides[k + 1]
            rows = band_rows(self.top_rows, self.cumulative_strides[k])
            if up < rows:
                raise ConfigError(f"top_rows={self.top_rows} does not divide cleanly across scales")

    @property
    def cumulative_strides(self) -> tuple:
        return tuple(int(v) for v in np.cumprod(self.vertical_strides))

    @property
    def output_stage(self) -> int:
        """Index of the last encoder stage at vertical stride 2 (decoder output scale)."""
        return max(i for i, s in enumerate(self.cumulative_strides) if s == 2)

    @property
    def delta(self) -> int:
        """Vertical reach of the post-fusion transpose conv beyond the fused top band."""
        return FINAL_KERNEL_H - 1

    # ----- plain-text form

    def to_text(self) -> str:
        return kv.format_kv({
            "variant": self.variant,
            "channels": ",".join(map(str, self.stage_channels)),
            "blocks": ",".join(map(str, self.blocks_per_stage)),
            "strides": ",".join(map(str, self.vertical_strides)),
            "top_rows": self.top_rows,
            "classes": self.num_classes,
            "input_channels": self.in_channels,
            "decoder_channels": self.decoder_channels,
            "height": self.H,
            "width": self.W,
        })

    @classmethod
    def from_text(cls, text: str, source: str = "<net config>") -> "NetConfig":
        keys = {"variant", "channels", "blocks", "strides", "top_rows", "classes",
                "input_channels", "decoder_channels", "height", "width"}
        vals = kv.parse_kv(text, keys, source)
        variant = vals.get("variant", "MiniLaserNet")
        H = int(vals.get("height", 64))
        W = int(vals.get("width", 512))
        over = {}
        if "channels" in vals:
            over["stage_channels"] = kv.int_list(vals["channels"])
        if "blocks" in vals:
            over["blocks_per_stage"] = kv.int_list(vals["blocks"])
        if "strides" in vals:
            over["vertical_strides"] = kv.int_list(vals["strides"])
        for key, attr in (("top_rows", "top_rows"), ("classes", "num_classes"),
                          ("input_channels", "in_channels"),
                          ("decoder_channels", "decoder_channels")):
            if key in vals:
                try:
                    over[attr] = int(vals[key])
                except ValueError:
                    raise ConfigError(f"{source}: {key} must be an integer") from None
        return cls.default(variant, H, W, **over)

    def with_input(self, in_channels: int) -> "NetConfig":
        return replace(self, in_channels=in_channels)


def band_rows(top_rows: int, cumulative_stride: int) -> int:
    return max(1, top_rows // cumulative_stride)


def crop_top_band(feature: Tensor, top_rows: int, cumulative_stride: int) -> Tensor:
    """Keep the rows of ``feature`` that correspond to the top ``top_rows`` image rows."""
    rows = min(band_rows(top_rows, cumulative_stride), feature.shape[1])
    return F.crop_rows(feature, 0, rows)


# ---------------------------------------------------------------------------
# encoder


class BasicBlock(Module):
    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv1 = Conv2d(cin, cout, (3, 3), (stride, 1), bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(cout, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, (3, 3), (1, 1), bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(cout, dtype=dtype)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, (1, 1), (stride, 1), (0, 0), bias=False, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(cout, dtype=dtype)
        else:
            self.proj = None

    def __call__(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        short = x if self.proj is None else self.proj_bn(self.proj(x))
        return F.relu(F.add(out, short))


class Encoder(Module):
    def __init__(self, cfg: NetConfig, rng, dtype):
        c0 = cfg.stage_channels[0]
        self.stem = ConvBNReLU(cfg.in_channels, c0, rng=rng, dtype=dtype)
        self.stages = []
        cin = c0
        for cout, nblocks, stride in zip(cfg.stage_channels, cfg.blocks_per_stage,
                                         cfg.vertical_strides):
            blocks = [BasicBlock(cin, cout, stride, rng, dtype)]
            blocks += [BasicBlock(cout, cout, 1, rng, dtype) for _ in range(nblocks - 1)]
            self.stages.append(_Stage(blocks))
            cin = cout

    def __call__(self, x) -> List[List[Tensor]]:
        """Outputs of every block, grouped per stage."""
        feats = []
        h = self.stem(x)
        for stage in self.stages:
            outs = []
            for block in stage.blocks:
                h = block(h)
                outs.append(h)
            feats.append(outs)
        return feats


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks


# ---------------------------------------------------------------------------
# decoders


class LightDecoder(Module):
    """U-Net style: one skip concatenation per level."""

    def __init__(self, cfg: NetConfig, rng, dtype):
        cd = cfg.decoder_channels
        n = len(cfg.stage_channels)
        self.levels = []
        prev = cfg.stage_channels[-1]
        for k in range(n - 2, cfg.output_stage - 1, -1):
            self.levels.append(_Level(
                UpBNReLU(prev, cd, cfg.vertical_strides[k + 1], rng, dtype),
                [ConvBNReLU(cd + cfg.stage_channels[k], cd, rng=rng, dtype=dtype)],
                k,
            ))
            prev = cd
        self.proj = ConvBNReLU(prev, cd, (1, 1), rng=rng, dtype=dtype) if not self.levels else None

    def __call__(self, feats):
        h = feats[-1][-1]
        for level in self.levels:
            h = level.up(h)
            h = F.concat([h, feats[level.stage][-1]], axis=0)
            h = level.convs[0](h)
        return h if self.proj is None else self.proj(h)


class HeavyDecoder(Module):
    """DLA-flavoured dense aggregation restricted to the top band."""

    def __init__(self, cfg: NetConfig, rng, dtype):
        cd = cfg.decoder_channels
        n = len(cfg.stage_channels)
        self.top_rows = cfg.top_rows
        self.cum = cfg.cumulative_strides
        self.levels = []
        prev = cfg.stage_channels[-1]
        for k in range(n - 2, cfg.output_stage - 1, -1):
            dense_in = cd + cfg.blocks_per_stage[k] * cfg.stage_channels[k]
            self.levels.append(_Level(
                UpBNReLU(prev, cd, cfg.vertical_strides[k + 1], rng, dtype),
                [ConvBNReLU(dense_in, cd, rng=rng, dtype=dtype),
                 ConvBNReLU(cd, cd, rng=rng, dtype=dtype)],
                k,
            ))
            prev = cd
        self.proj = ConvBNReLU(prev, cd, (1, 1), rng=rng, dtype=dtype) if not self.levels else None

    def __call__(self, feats):
        h = crop_top_band(feats[-1][-1], self.top_rows, self.cum[-1])
        for level in self.levels:
            k = level.stage
            h = crop_top_band(level.up(h), self.top_rows, self.cum[k])
            skips = [crop_top_band(f, self.top_rows, self.cum[k]) for f in feats[k]]
            h = F.concat([h] + skips, axis=0)
            for conv in level.convs:
                h = conv(h)
        return h if self.proj is None else self.proj(h)


class _Level(Module):
    def __init__(self, up, convs, stage):
        self.up = up
        self.convs = convs
        self.stage = stage


# ---------------------------------------------------------------------------


class RangeAwareNet(Module):
    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        cd, C = cfg.decoder_channels, cfg.num_classes
        up = dict(kernel=(FINAL_KERNEL_H, 3), stride=(2, 1), padding=(0, 1), rng=rng, dtype=dtype)
        self.encoder = Encoder(cfg, rng, dtype)
        self.light = LightDecoder(cfg, rng, dtype)
        self.heavy = HeavyDecoder(cfg, rng, dtype)
        self.heavy_head = ConvTranspose2d(cd, C, **up)
        self.light_head = ConvTranspose2d(cd, C, **up)
        self.fuse = Conv2d(2 * cd, cd, (1, 1), (1, 1), (0, 0), rng=rng, dtype=dtype)
        self.final = ConvTranspose2d(cd, C, **up)

    @property
    def band_half(self) -> int:
        return self.cfg.top_rows // 2

    def heavy_parameters(self):
        named = list(self.heavy.named_parameters("heavy."))
        named += list(self.heavy_head.named_parameters("heavy_head."))
        return named

    def input_tensor(self, img) -> Tensor:
        data = img.channels if hasattr(img, "channels") else np.asarray(img)
        expected = (self.cfg.in_channels, self.cfg.H, self.cfg.W)
        if data.shape != expected:
            raise ConfigError(f"input {data.shape} does not match network input {expected}")
        return Tensor(np.asarray(data, dtype=self.dtype))

    def forward(self, img):
        """Return ``(fused, heavy, light)`` logits of shapes ``(C,H,W)``,
        ``(C,top_rows,W)`` and ``(C,H,W)``."""
        x = img if isinstance(img, Tensor) else self.input_tensor(img)
        if isinstance(img, Tensor) and x.shape != (self.cfg.in_channels, self.cfg.H, self.cfg.W):
            raise ConfigError(f"input {x.shape} does not match network config")
        feats = self.encoder(x)
        light = self.light(feats)
        heavy = self.heavy(feats)
        tb = self.band_half
        top = F.concat([heavy, F.crop_rows(light, 0, tb)], axis=0)
        top = F.relu(self.fuse(top))
        fused = F.concat([top, F.crop_rows(light, tb)], axis=1)
        return self.final(fused), self.heavy_head(heavy), self.light_head(light)

    __call__ = forward

    def predict(self, img) -> np.ndarray:
        """Class raster from the fused logits with running normalization statistics."""
        was_training = self.training
        self.eval()
        try:
            with F.no_grad():
                fused, _, _ = self.forward(img)
        finally:
            self.train(was_training)
        occupancy = img.occupancy if hasattr(img, "occupancy") else None
        return logits_to_raster(fused.data, occupancy)


def logits_to_raster(logits: np.ndarray, occupancy=None) -> np.ndarray:
    """Argmax over channels (first maximal channel wins ties); empty cells become 0."""
    raster = np.argmax(logits, axis=0).astype(np.uint8)
    if occupancy is not None:
        raster[np.asarray(occupancy) <= 0] = 0
    return raster
