"""Random gradient-check cases for every engine operator and every loss.

Each case factory takes a ``numpy`` generator and returns ``(leaves, build)``:
float64 leaf tensors and a closure producing a scalar tensor from them.
"""

from __future__ import annotations

import numpy as np

from oracles import numeric_grad, rel_error
from rangeseg.losses import LossConfig, combined_loss, combined_loss_logits, cross_entropy, lovasz_softmax, total_loss
from rangeseg.nn import tensor as F
from rangeseg.nn.tensor import Tensor, conv_output_size, tconv_output_size

STEP = 1e-5
TOLERANCE = 1e-4


def leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _conv(rng):
    while True:
        C, Co = rng.integers(1, 4, 2)
        H, W = rng.integers(3, 7, 2)
        kh, kw = rng.integers(1, 4, 2)
        sh = int(rng.integers(1, 3))
        ph, pw = int(rng.integers(0, kh // 2 + 1)), int(rng.integers(0, kw // 2 + 1))
        if conv_output_size(H, kh, sh, ph) >= 1 and conv_output_size(W, kw, 1, pw) >= 1:
            break
    x, w, b = leaf(rng.standard_normal((C, H, W))), leaf(rng.standard_normal((Co, C, kh, kw))), \
        leaf(rng.standard_normal(Co))
    proj = rng.standard_normal((Co, conv_output_size(H, kh, sh, ph), conv_output_size(W, kw, 1, pw)))
    return [x, w, b], lambda: F.weighted_sum(F.conv2d(x, w, b, (sh, 1), (ph, pw)), proj)


def _tconv(rng):
    while True:
        C, Co = rng.integers(1, 4, 2)
        H, W = rng.integers(2, 6, 2)
        kh, kw = rng.integers(1, 4, 2)
        sh = int(rng.integers(1, 3))
        ph, pw = int(rng.integers(0, kh // 2 + 1)), int(rng.integers(0, kw // 2 + 1))
        if tconv_output_size(H, kh, sh, ph) >= 1 and tconv_output_size(W, kw, 1, pw) >= 1:
            break
    x, w, b = leaf(rng.standard_normal((C, H, W))), leaf(rng.standard_normal((C, Co, kh, kw))), \
        leaf(rng.standard_normal(Co))
    proj = rng.standard_normal((Co, tconv_output_size(H, kh, sh, ph), tconv_output_size(W, kw, 1, pw)))
    return [x, w, b], lambda: F.weighted_sum(F.conv_transpose2d(x, w, b, (sh, 1), (ph, pw)), proj)


def _batchnorm(training):
    def case(rng):
        C = int(rng.integers(1, 4))
        H, W = rng.integers(2, 6, 2)
        x = leaf(rng.standard_normal((C, H, W)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2))
        gamma, beta = leaf(rng.uniform(0.5, 2, C)), leaf(rng.standard_normal(C))
        rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2, C)
        proj = rng.standard_normal((C, H, W))

        def build():
            out = F.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training)
            return F.weighted_sum(out, proj)

        return [x, gamma, beta], build
    return case


def _relu(rng):
    shape = tuple(rng.integers(1, 6, 3))
    data = rng.standard_normal(shape)
    data += np.sign(data) * 1e-2  # keep clear of the kink
    x = leaf(data)
    proj = rng.standard_normal(shape)
    return [x], lambda: F.weighted_sum(F.relu(x), proj)


def _add(rng):
    shape = tuple(rng.integers(1, 6, 3))
    a, b = leaf(rng.standard_normal(shape)), leaf(rng.standard_normal(shape))
    proj = rng.standard_normal(shape)
    return [a, b], lambda: F.weighted_sum(F.add(a, b), proj)


def _softmax(rng):
    shape = tuple(rng.integers(1, 6, 3))
    x = leaf(rng.standard_normal(shape) * 2)
    proj = rng.standard_normal(shape)
    return [x], lambda: F.weighted_sum(F.softmax(x, axis=0), proj)


def _concat(axis):
    def case(rng):
        C, H, W = rng.integers(1, 5, 3)
        n = int(rng.integers(1, 4))
        parts = []
        for _ in range(n):
            shape = [C, H, W]
            shape[axis] = int(rng.integers(1, 4))
            parts.append(leaf(rng.standard_normal(shape)))
        total = sum(p.shape[axis] for p in parts)
        shape = [C, H, W]
        shape[axis] = total
        proj = rng.standard_normal(shape)
        return parts, lambda: F.weighted_sum(F.concat(parts, axis), proj)
    return case


def _crop(rng):
    C, H, W = int(rng.integers(1, 4)), int(rng.integers(2, 8)), int(rng.integers(1, 5))
    lo = int(rng.integers(0, H - 1))
    hi = int(rng.integers(lo + 1, H + 1))
    x = leaf(rng.standard_normal((C, H, W)))
    proj = rng.standard_normal((C, hi - lo, W))
    return [x], lambda: F.weighted_sum(F.crop_rows(x, lo, hi), proj)


def _scalar_ops(rng):
    shape = tuple(rng.integers(1, 5, 3))
    x, y = leaf(rng.standard_normal(shape)), leaf(rng.standard_normal(shape))
    wx, wy = rng.standard_normal(shape), rng.standard_normal(shape)
    f = float(rng.uniform(-3, 3))
    return [x, y], lambda: F.add_scalars(F.scale(F.weighted_sum(x, wx), f), F.weighted_sum(y, wy))


OPERATOR_CASES = {
    "conv2d": _conv,
    "conv_transpose2d": _tconv,
    "batch_norm_train": _batchnorm(True),
    "batch_norm_eval": _batchnorm(False),
    "relu": _relu,
    "add": _add,
    "softmax": _softmax,
    "concat_channels": _concat(0),
    "concat_height": _concat(1),
    "crop_rows": _crop,
    "scale_and_sum": _scalar_ops,
}


# ---------------------------------------------------------------------------
# losses, on inputs no larger than 3 x 4 x 6


def _loss_shape(rng):
    return int(rng.integers(2, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 7))


def _probs(rng, shape):
    logits = rng.standard_normal(shape) * 1.5
    e = np.exp(logits - logits.max(axis=0))
    return e / e.sum(axis=0)


def _xent(rng):
    C, H, W = _loss_shape(rng)
    p = leaf(rng.uniform(0.05, 1.0, (C, H, W)))
    y = rng.integers(0, C, (H, W))
    return [p], lambda: cross_entropy(p, y)


def _lovasz(rng):
    C, H, W = _loss_shape(rng)
    p = leaf(_probs(rng, (C, H, W)))
    y = rng.integers(0, C, (H, W))
    return [p], lambda: lovasz_softmax(p, y)


def _combined(rng):
    C, H, W = _loss_shape(rng)
    p = leaf(_probs(rng, (C, H, W)))
    y = rng.integers(0, C, (H, W))
    lam = float(rng.uniform(0, 2))
    return [p], lambda: combined_loss(p, y, lam)


def _combined_logits(rng):
    C, H, W = _loss_shape(rng)
    z = leaf(rng.standard_normal((C, H, W)) * 1.5)
    y = rng.integers(0, C, (H, W))
    lam = float(rng.uniform(0, 2))
    return [z], lambda: combined_loss_logits(z, y, lam)


def _total(rng):
    C, H, W = _loss_shape(rng)
    H = max(H, 2)
    top = int(rng.integers(1, H))
    fused = leaf(rng.standard_normal((C, H, W)) * 1.5)
    light = leaf(rng.standard_normal((C, H, W)) * 1.5)
    heavy = leaf(rng.standard_normal((C, top, W)) * 1.5)
    y = rng.integers(0, C, (H, W))
    cfg = LossConfig(float(rng.uniform(0, 2)), float(rng.uniform(0, 2)), C)
    return [fused, heavy, light], lambda: total_loss(fused, heavy, light, y, cfg).total


LOSS_CASES = {
    "cross_entropy": _xent,
    "lovasz_softmax": _lovasz,
    "combined_loss": _combined,
    "combined_loss_logits": _combined_logits,
    "total_loss": _total,
}


def check_case(factory, seed: int) -> float:
    """Worst relative error over all leaves of one random case."""
    rng = np.random.default_rng(seed)
    leaves, build = factory(rng)
    for t in leaves:
        t.grad = None
    build().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]
    worst = 0.0
    for t, a in zip(leaves, analytic):
        n = numeric_grad(lambda: float(build().data), t.data, STEP)
        worst = max(worst, rel_error(a, n))
    return worst


def case_shapes(factory, seed: int) -> tuple:
    """Shapes of the leaves a case draws for ``seed``."""
    leaves, _ = factory(np.random.default_rng(seed))
    return tuple(t.shape for t in leaves)
