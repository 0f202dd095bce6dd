"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` records its value, the tensors it was computed from, and a
closure that routes an upstream gradient to those parents.  Calling
``backward()`` on a scalar output walks the graph once in reverse
topological order.  The kernel set is exactly what the models here need;
every differentiable kernel is checked against central finite differences
in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_const",
    "exp",
    "sqrt",
    "sin",
    "cos",
    "asin",
    "atan2",
    "relu",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "getitem",
    "mask_rows",
    "embedding",
    "tsum",
    "tmean",
    "softmax",
    "layer_norm",
    "conv2d",
    "dense",
    "softmax_attention",
    "smooth_l1_per_sample",
    "smooth_l1",
    "grad_check",
]


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    # Make `ndarray <op> Tensor` defer to our reflected operators instead of
    # numpy trying to broadcast over the Tensor object.
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, grad={self.grad is not None})"

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _topo_order(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; everything defers to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; every reachable node appears exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Tensor(a.value + b.value, parents=(a, b), backward=backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return Tensor(a.value - b.value, parents=(a, b), backward=backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(a.value * b.value, parents=(a, b), backward=backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return Tensor(a.value / b.value, parents=(a, b), backward=backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return Tensor(-a.value, parents=(a,), backward=backward)


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * p * a.value ** (p - 1))

    return Tensor(a.value**p, parents=(a,), backward=backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def backward(g):
        _accum(a, g * out)

    return Tensor(out, parents=(a,), backward=backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)

    def backward(g):
        _accum(a, g * 0.5 / out)

    return Tensor(out, parents=(a,), backward=backward)


# -- trig kernels (used by the differentiable motion composition) -----------


def sin(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * np.cos(a.value))

    return Tensor(np.sin(a.value), parents=(a,), backward=backward)


def cos(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g * np.sin(a.value))

    return Tensor(np.cos(a.value), parents=(a,), backward=backward)


def asin(a) -> Tensor:
    """arcsine with inputs clipped into [-1, 1] (products of rotations can
    overshoot by a few ulp)."""
    a = as_tensor(a)
    x = np.clip(a.value, -1.0, 1.0)

    def backward(g):
        _accum(a, g / np.sqrt(np.maximum(1.0 - x * x, 1e-24)))

    return Tensor(np.arcsin(x), parents=(a,), backward=backward)


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)

    def backward(g):
        denom = x.value * x.value + y.value * y.value
        _accum(y, _unbroadcast(g * x.value / denom, y.value.shape))
        _accum(x, _unbroadcast(-g * y.value / denom, x.value.shape))

    return Tensor(np.arctan2(y.value, x.value), parents=(y, x), backward=backward)


# -- shape manipulation ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(a.value.reshape(shape), parents=(a,), backward=backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inverse))

    return Tensor(a.value.transpose(axes), parents=(a,), backward=backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=backward,
    )


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _accum(a, full)

    return Tensor(a.value[idx], parents=(a,), backward=backward)


def mask_rows(a, mask: np.ndarray) -> Tensor:
    """Select rows by boolean mask along the first axis."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        full = np.zeros_like(a.value)
        full[mask] = g
        _accum(a, full)

    return Tensor(a.value[mask], parents=(a,), backward=backward)


def embedding(table, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids, g)
        _accum(table, full)

    return Tensor(table.value[ids], parents=(table,), backward=backward)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), parents=(a,), backward=backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.value.shape).copy())

    return Tensor(a.value.mean(axis=axis, keepdims=keepdims), parents=(a,), backward=backward)


# -- neural kernels -----------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * (a.value > 0.0))

    return Tensor(np.maximum(a.value, 0.0), parents=(a,), backward=backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape))

    return Tensor(a.value @ b.value, parents=(a, b), backward=backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * out)

    return Tensor(out, parents=(a,), backward=backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gamma.value * xhat + beta.value

    def backward(g):
        lead_axes = tuple(range(g.ndim - 1))
        _accum(gamma, _unbroadcast((g * xhat).sum(axis=lead_axes), gamma.value.shape))
        _accum(beta, _unbroadcast(g.sum(axis=lead_axes), beta.value.shape))
        if x.requires_grad:
            dxhat = g * gamma.value
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (dxhat - m1 - xhat * m2) * inv)

    return Tensor(out, parents=(x, gamma, beta), backward=backward)


def conv2d(x, weight, bias, stride: int = 2, pad: int = 1) -> Tensor:
    """2-D convolution, NHWC layout, kernel (kh, kw, cin, cout), square
    stride/padding.

    Channels-last keeps the flattened patch matrix a zero-copy reshape, so
    forward and both gradients are each a single matmul plus strided
    slice-assignments (no transposes of big buffers anywhere).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    bsz, hh, ww, cin = x.value.shape
    kh, kw, cin_w, cout = weight.value.shape
    if cin != cin_w:
        raise ValueError(f"input channels {cin} != kernel channels {cin_w}")
    oh = (hh + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((bsz, hh + 2 * pad, ww + 2 * pad, cin), dtype=np.float64)
        xp[:, pad : pad + hh, pad : pad + ww, :] = x.value
    else:
        xp = x.value

    sb, sh, sw, sc = xp.strides
    patch_view = np.lib.stride_tricks.as_strided(
        xp, (bsz, oh, ow, kh, kw, cin), (sb, stride * sh, stride * sw, sh, sw, sc)
    )
    cols2 = np.ascontiguousarray(patch_view).reshape(bsz * oh * ow, kh * kw * cin)
    wmat = weight.value.reshape(kh * kw * cin, cout)
    out = (cols2 @ wmat + bias.value).reshape(bsz, oh, ow, cout)

    def backward(g):
        g2 = g.reshape(bsz * oh * ow, cout)
        _accum(weight, (cols2.T @ g2).reshape(weight.value.shape))
        _accum(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(bsz, oh, ow, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[
                        :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :
                    ] += dcols[:, :, :, ki, kj, :]
            _accum(x, dxp[:, pad : pad + hh, pad : pad + ww, :] if pad else dxp)

    return Tensor(out, parents=(x, weight, bias), backward=backward)


def dense(x, weight, bias) -> Tensor:
    """Affine map on the last axis: x @ weight + bias."""
    return add(matmul(x, weight), bias)


def softmax_attention(q, k, v) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / math.sqrt(q.value.shape[-1])
    scores = mul(matmul(q, transpose(k, _swap_last(k.value.ndim))), scale)
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def smooth_l1_per_sample(pred, gt, beta: float = 1.0, weights=None) -> Tensor:
    """Per-row smooth-L1: quadratic inside |d| < beta, linear outside,
    averaged over the last axis.  ``weights`` optionally scales each
    component before averaging."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = as_tensor(pred)
    gt = gt.value if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    d = pred.value - gt
    absd = np.abs(d)
    quad = absd < beta
    elems = np.where(quad, 0.5 * d * d / beta, absd - 0.5 * beta)
    if w is not None:
        elems = elems * w
    out = elems.mean(axis=-1)

    def backward(g):
        de = np.where(quad, d / beta, np.sign(d))
        if w is not None:
            de = de * w
        _accum(pred, np.expand_dims(g, -1) * de / pred.value.shape[-1])

    return Tensor(out, parents=(pred,), backward=backward)


def smooth_l1(pred, gt, beta: float = 1.0, weights=None) -> Tensor:
    """Batch-mean smooth-L1 loss (scalar)."""
    return tmean(smooth_l1_per_sample(pred, gt, beta, weights))


# -- gradient checking --------------------------------------------------------


def grad_check(op, inputs, eps: float = 1e-4, seed: int = 0) -> float:
    """Max deviation between reverse-mode and central-difference gradients.

    ``op`` maps the input tensors to one tensor of any shape; the output is
    contracted to a scalar with a fixed random projection.  The deviation
    is |analytic - numeric| / max(1, |analytic|, |numeric|), maximized over
    every element of every input.
    """
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
    out = op(*inputs)
    proj = np.random.default_rng(seed).standard_normal(out.value.shape)

    def scalar_of(values: list[np.ndarray]) -> float:
        frozen = [Tensor(v) for v in values]
        return float((op(*frozen).value * proj).sum())

    loss = tsum(mul(out, proj))
    for t in inputs:
        t.grad = None
    loss.backward()

    worst = 0.0
    base = [t.value for t in inputs]
    for pos, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.value)
        flat = base[pos].reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = scalar_of(base)
            flat[i] = orig - eps
            lo = scalar_of(base)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        numeric = numeric.reshape(t.value.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
