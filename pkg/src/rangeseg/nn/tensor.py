"""
Reverse-mode tensor engine for single-frame ``(C, H, W)`` feature maps.

Every operator returns a new :class:`Tensor` that remembers its parents and a
closure propagating its output gradient back to them.  ``Tensor.backward``
walks the recorded graph in reverse topological order.  Data may be float32
(training) or float64 (gradient checks); operators preserve the input dtype.
"""

from __future__ import annotations

import contextlib

import numpy as np

from rangeseg.errors import ShapeMismatchError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, name={self.name!r})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    def __getitem__(self, rows):
        if not isinstance(rows, slice):
            raise TypeError("tensors only support row slicing: t[start:stop]")
        return crop_rows(self, rows.start or 0, rows.stop)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Skip graph recording (inference only)."""
    global _GRAD_ENABLED
    previous, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _needs_grad(*tensors) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._backward is not None for t in tensors)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def tconv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride + kernel - 2 * pad


def _im2col(xp, kh, kw, sh, sw, Ho, Wo):
    C = xp.shape[0]
    cols = np.empty((C, kh, kw, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]
    return cols


def _col2im(cols, shape, kh, kw, sh, sw):
    out = np.zeros(shape, dtype=cols.dtype)
    Ho, Wo = cols.shape[-2:]
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += cols[:, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Zero-padded cross-correlation. ``weight`` is ``(C_out, C_in, kh, kw)``."""
    (sh, sw), (ph, pw) = stride, padding
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects (C,H,W) input and 4-D weight, "
                                 f"got {x.shape} and {weight.shape}")
    C, H, W = x.shape
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeMismatchError(f"conv2d weight expects {Ci} input channels, got {C}")
    Ho, Wo = conv_output_size(H, kh, sh, ph), conv_output_size(W, kw, sw, pw)
    if Ho < 1 or Wo < 1:
        raise ShapeMismatchError(f"conv2d kernel {kh}x{kw} larger than padded input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = _im2col(xp, kh, kw, sh, sw, Ho, Wo).reshape(C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(Co, -1)
    out = (wmat @ cols).reshape(Co, Ho, Wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def backward(g):
        gmat = g.reshape(Co, Ho * Wo)
        gw = (gmat @ cols.T).reshape(weight.shape)
        gx = None
        if _needs_grad(x):
            gcols = (wmat.T @ gmat).reshape(C, kh, kw, Ho, Wo)
            gxp = _col2im(gcols, xp.shape, kh, kw, sh, sw)
            gx = gxp[:, ph:ph + H, pw:pw + W]
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same weight.

    ``weight`` is ``(C_in, C_out, kh, kw)``; output height is
    ``(H - 1) * sh + kh - 2 * ph``.
    """
    (sh, sw), (ph, pw) = stride, padding
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ShapeMismatchError(f"conv_transpose2d expects (C,H,W) input and 4-D weight, "
                                 f"got {x.shape} and {weight.shape}")
    C, H, W = x.shape
    Ci, Co, kh, kw = weight.shape
    if Ci != C:
        raise ShapeMismatchError(f"conv_transpose2d weight expects {Ci} input channels, got {C}")
    Hf, Wf = (H - 1) * sh + kh, (W - 1) * sw + kw
    Ho, Wo = Hf - 2 * ph, Wf - 2 * pw
    if Ho < 1 or Wo < 1:
        raise ShapeMismatchError("conv_transpose2d padding removes the whole output")
    wmat = weight.data.reshape(Ci, Co * kh * kw)
    xmat = x.data.reshape(Ci, H * W)
    cols = (wmat.T @ xmat).reshape(Co, kh, kw, H, W)
    full = _col2im(cols, (Co, Hf, Wf), kh, kw, sh, sw)
    out = full[:, ph:ph + Ho, pw:pw + Wo].copy()
    if bias is not None:
        out += bias.data[:, None, None]

    def backward(g):
        gfull = np.zeros((Co, Hf, Wf), dtype=g.dtype)
        gfull[:, ph:ph + Ho, pw:pw + Wo] = g
        gcols = _im2col(gfull, kh, kw, sh, sw, H, W).reshape(Co * kh * kw, H * W)
        gw = (xmat @ gcols.T).reshape(weight.shape)
        gx = (wmat @ gcols).reshape(C, H, W) if _needs_grad(x) else None
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# normalization and pointwise ops


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over ``H x W``.

    In training mode the frame's own statistics are used and the running
    buffers are updated in place as ``momentum * old + (1 - momentum) * new``.
    """
    C = x.shape[0]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatchError(f"batch_norm parameters must have shape ({C},)")
    if training:
        mean = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        gxhat = g * gamma.data[:, None, None]
        if training:
            n = xhat.shape[1] * xhat.shape[2]
            gx = (inv_std[:, None, None] / n) * (
                n * gxhat
                - gxhat.sum(axis=(1, 2), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(1, 2), keepdims=True)
            )
        else:
            gx = gxhat * inv_std[:, None, None]
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add operands differ: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along channels (``axis=0``) or height (``axis=1``)."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatchError("concat needs at least one operand")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                a != b for d, (a, b) in enumerate(zip(t.shape, ref)) if d != axis):
            raise ShapeMismatchError(f"concat operands disagree off axis {axis}: {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _result(out, tensors, backward)


def crop_rows(x: Tensor, start: int, stop: int | None = None) -> Tensor:
    """Rows ``[start, stop)`` of a ``(C, H, W)`` tensor."""
    H = x.shape[1]
    stop = H if stop is None else stop
    if not 0 <= start < stop <= H:
        raise ShapeMismatchError(f"row crop [{start}, {stop}) outside height {H}")
    out = x.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _result(out, (x,), backward)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """``sum(x * weights)`` as a scalar tensor; ``weights`` is a constant."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeMismatchError(f"weights {w.shape} do not match {x.shape}")
    return _result(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,))


def scale(x: Tensor, factor: float) -> Tensor:
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def add_scalars(*terms: Tensor) -> Tensor:
    """Sum of scalar tensors."""
    total = sum(float(t.data) for t in terms)
    dtype = terms[0].dtype
    return _result(np.asarray(total, dtype=dtype), terms, lambda g: tuple(g for _ in terms))
