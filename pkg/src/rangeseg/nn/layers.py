"""Parameterized layers built on the functional operators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from rangeseg.errors import ConfigError
from rangeseg.nn import tensor as F
from rangeseg.nn.tensor import Tensor


class LayerKind(str, Enum):
    CONV = "Conv"
    TCONV = "TConv"
    BATCHNORM = "BatchNorm"
    RELU = "ReLU"
    CONCAT = "Concat"
    ADD = "Add"
    SOFTMAX = "Softmax"


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer.

    Horizontal stride is fixed to 1: features are only ever down- or
    up-sampled along the image height.
    """

    kind: LayerKind
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    channels_in: int = 0
    channels_out: int = 0
    padding: tuple = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.stride[1] != 1:
            raise ConfigError(f"horizontal stride must be 1, got {self.stride[1]}")
        if self.stride[0] < 1 or min(self.kernel) < 1 or min(self.padding) < 0:
            raise ConfigError(f"invalid geometry in {self}")
        if self.kind is LayerKind.TCONV and self.stride[0] not in (1, 2):
            raise ConfigError(f"transpose conv vertical stride must be 1 or 2, got {self.stride[0]}")


class Module:
    """Minimal container: parameters and sub-modules are discovered from attributes
    in assignment order, which fixes the naming used by checkpoints."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
        yield from self._own_buffers(prefix)

    def _own_buffers(self, prefix):
        return iter(())

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state(self) -> dict:
        """Name -> array for parameters and buffers (views, not copies)."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=(3, 3), stride=(1, 1), padding=None,
                 bias=True, rng=None, dtype=np.float32):
        if padding is None:
            padding = (kernel[0] // 2, kernel[1] // 2)
        self.spec = LayerSpec(LayerKind.CONV, tuple(kernel), tuple(stride), cin, cout, tuple(padding))
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        self.weight = Tensor(_he_uniform(rng, (cout, cin, kh, kw), cin * kh * kw, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel=(2, 3), stride=(2, 1), padding=(0, 1),
                 bias=True, rng=None, dtype=np.float32):
        self.spec = LayerSpec(LayerKind.TCONV, tuple(kernel), tuple(stride), cin, cout, tuple(padding))
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        fan_in = cin * kh * kw // (stride[0] * stride[1])
        self.weight = Tensor(_he_uniform(rng, (cin, cout, kh, kw), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.spec = LayerSpec(LayerKind.BATCHNORM, channels_in=channels, channels_out=channels)
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def _own_buffers(self, prefix):
        yield f"{prefix}running_mean", self.running_mean
        yield f"{prefix}running_var", self.running_var

    def __call__(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    def __init__(self, cin, cout, kernel=(3, 3), stride=(1, 1), rng=None, dtype=np.float32):
        self.conv = Conv2d(cin, cout, kernel, stride, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def __call__(self, x):
        return F.relu(self.bn(self.conv(x)))


class UpBNReLU(Module):
    """Vertical upsampling by a transpose conv, then norm and ReLU."""

    def __init__(self, cin, cout, factor=2, rng=None, dtype=np.float32):
        self.up = ConvTranspose2d(cin, cout, (factor, 3), (factor, 1), (0, 1),
                                  bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def __call__(self, x):
        return F.relu(self.bn(self.up(x)))
