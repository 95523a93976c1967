"""Small differentiable tensor engine (conv, transpose conv, batch norm, ReLU,
concat, residual add, softmax) with reverse-mode gradients."""

from rangeseg.nn.checkpoint import load_checkpoint, save_checkpoint
from rangeseg.nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    LayerKind,
    LayerSpec,
    Module,
)
from rangeseg.nn.optim import SGD
from rangeseg.nn.tensor import (
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    crop_rows,
    no_grad,
    relu,
    softmax,
    weighted_sum,
)

__all__ = [
    "BatchNorm2d", "Conv2d", "ConvTranspose2d", "LayerKind", "LayerSpec", "Module",
    "SGD", "Tensor", "add", "batch_norm", "concat", "conv2d", "conv_transpose2d",
    "crop_rows", "load_checkpoint", "no_grad", "relu", "save_checkpoint", "softmax", "weighted_sum",
]
