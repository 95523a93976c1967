"""
Segmentation losses: pixel cross-entropy, Lovasz-softmax, their weighted sum,
and the range-aware total over fused, light and heavy predictions.

All losses take per-pixel class probabilities ``p`` of shape ``(C, H, W)``
(softmax outputs) and an integer target raster ``(H, W)``; the ``*_logits``
helpers apply the channel softmax first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rangeseg.errors import ConfigError, ShapeMismatchError
from rangeseg.nn import tensor as F
from rangeseg.nn.tensor import Tensor, _result

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lambda_lovasz: float = 1.0
    lambda_range: float = 1.0
    num_classes: int = 4

    def __post_init__(self):
        if self.lambda_lovasz < 0 or self.lambda_range < 0:
            raise ConfigError("loss weights must be non-negative")


def _one_hot(y, C: int, shape) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 3:
        if y.shape != shape:
            raise ShapeMismatchError(f"one-hot target {y.shape} vs prediction {shape}")
        return y.astype(np.float64)
    if y.shape != shape[1:]:
        raise ShapeMismatchError(f"target {y.shape} vs prediction {shape}")
    if y.size and (y.min() < 0 or y.max() >= C):
        raise ShapeMismatchError(f"target classes outside [0, {C})")
    return (np.arange(C)[:, None, None] == y[None]).astype(np.float64)


def _class_ids(y, shape) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 3:
        if y.shape != shape:
            raise ShapeMismatchError(f"one-hot target {y.shape} vs prediction {shape}")
        return np.argmax(y, axis=0)
    if y.shape != shape[1:]:
        raise ShapeMismatchError(f"target {y.shape} vs prediction {shape}")
    return y.astype(np.int64)


def cross_entropy(p: Tensor, y) -> Tensor:
    """``-(1 / (H*W*C)) * sum(y * log p)`` with ``p`` floored at 1e-7.

    The normalization divides by the class count as well as the pixel count.
    """
    C, H, W = p.shape
    onehot = _one_hot(y, C, p.shape).astype(p.dtype)
    clipped = np.clip(p.data, PROB_FLOOR, 1.0)
    norm = 1.0 / (H * W * C)
    value = -norm * float((onehot * np.log(clipped)).sum())
    inside = (p.data >= PROB_FLOOR) & (p.data <= 1.0)

    def backward(g):
        return (g * (-norm) * onehot / clipped * inside,)

    return _result(np.asarray(value, dtype=p.dtype), (p,), backward)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard loss for errors sorted
    in decreasing order, given the ground-truth indicator in that order."""
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if jaccard.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_extension(errors: np.ndarray, gt: np.ndarray) -> float:
    """Lovasz extension of the Jaccard loss evaluated at an error vector."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    gt = np.asarray(gt).ravel().astype(bool)
    order = np.argsort(-errors, kind="stable")
    return float(errors[order] @ lovasz_grad(gt[order]))


def lovasz_classes(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Classes that enter the mean: present in the target or in the argmax prediction."""
    C = p.shape[0]
    present = np.zeros(C, dtype=bool)
    present[np.unique(y)] = True
    present[np.unique(np.argmax(p, axis=0))] = True
    return np.flatnonzero(present)


def lovasz_softmax(p: Tensor, y) -> Tensor:
    """Mean over included classes of the Lovasz extension of per-class errors
    ``1 - p_c`` on pixels of class ``c`` and ``p_c`` elsewhere."""
    C = p.shape[0]
    yid = _class_ids(y, p.shape)
    probs = p.data.reshape(C, -1)
    labels = yid.ravel()
    classes = lovasz_classes(p.data, yid)
    grad = np.zeros_like(probs)
    total = 0.0
    for c in classes:
        fg = labels == c
        errors = np.where(fg, 1.0 - probs[c], probs[c])
        order = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[order])
        total += float(errors[order] @ g)
        dm = np.empty_like(g)
        dm[order] = g
        grad[c] = np.where(fg, -dm, dm)
    n = max(len(classes), 1)
    value = total / n
    grad = (grad / n).reshape(p.shape).astype(p.dtype)
    return _result(np.asarray(value, dtype=p.dtype), (p,), lambda g: (g * grad,))


def combined_loss(p: Tensor, y, lambda_lovasz: float = 1.0) -> Tensor:
    """Cross-entropy plus weighted Lovasz-softmax."""
    xent = cross_entropy(p, y)
    if lambda_lovasz == 0:
        return xent
    return F.add_scalars(xent, F.scale(lovasz_softmax(p, y), lambda_lovasz))


def combined_loss_logits(logits: Tensor, y, lambda_lovasz: float = 1.0) -> Tensor:
    return combined_loss(F.softmax(logits, axis=0), y, lambda_lovasz)


@dataclass
class LossBreakdown:
    pred: Tensor
    range: Tensor
    total: Tensor


def total_loss(fused: Tensor, heavy: Tensor, light: Tensor, y, cfg: LossConfig) -> LossBreakdown:
    """Fused-prediction loss plus ``lambda_range`` times the light (full raster)
    and heavy (top-band raster) losses.  Inputs are logits."""
    y = np.asarray(y)
    if fused.shape[1:] != y.shape or light.shape[1:] != y.shape:
        raise ShapeMismatchError(f"fused/light logits {fused.shape}/{light.shape} vs target {y.shape}")
    top = heavy.shape[1]
    if heavy.shape[2] != y.shape[1] or top > y.shape[0]:
        raise ShapeMismatchError(f"heavy logits {heavy.shape} vs target {y.shape}")
    pred = combined_loss_logits(fused, y, cfg.lambda_lovasz)
    rng_loss = F.add_scalars(
        combined_loss_logits(light, y, cfg.lambda_lovasz),
        combined_loss_logits(heavy, y[:top], cfg.lambda_lovasz),
    )
    if cfg.lambda_range == 0:
        total = pred
    else:
        total = F.add_scalars(pred, F.scale(rng_loss, cfg.lambda_range))
    return LossBreakdown(pred, rng_loss, total)
