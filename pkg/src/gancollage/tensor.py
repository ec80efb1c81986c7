"""Dense float64 tensors with a reverse-mode gradient tape.

Every network forward pass in this package runs through these ops. A Tensor
wraps a numpy array; applying an op produces a new Tensor that remembers its
parents and a closure computing the parents' gradients. ``Tensor.backward``
walks that tape in reverse topological order and accumulates gradients on
the leaves that asked for them.

The engine is deliberately small: float64 only, CPU only, first order only.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError, ParameterError, UsageError

Array = np.ndarray


def _check_finite(arr: Array, op: str) -> None:
    # One cheap reduction catches NaN and +/-Inf; the slow exact scan only
    # runs when the sum itself overflows on legitimately finite data.
    s = float(arr.sum()) if arr.size else 0.0
    if not math.isfinite(s):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense float64 array plus the tape edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None
        self._op = "leaf"

    # ------------------------------------------------------------------ #
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------ #
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar output")
        tape = Tape(self)
        flowing: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape.nodes):
            grad = flowing.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = grad if node.grad is None else node.grad + grad
                continue
            for parent, pgrad in zip(node._parents, node._backward(grad)):
                if pgrad is None:
                    continue
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pgrad
                else:
                    flowing[pid] = pgrad

    # operators ---------------------------------------------------------- #
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Tape:
    """Topologically ordered view of the graph below a root.

    ``nodes`` lists every reachable tensor with inputs strictly before the
    ops that consume them, which is the order backward() is replayed against.
    """

    def __init__(self, root: Tensor):
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
        self.nodes = order


# ---------------------------------------------------------------------- #
# op plumbing
# ---------------------------------------------------------------------- #

def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: Array, op: str, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    _check_finite(data, op)
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------- #
# elementwise ops
# ---------------------------------------------------------------------- #

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _node(a.data * b.data, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return (ga, gb)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _node(out, "div", (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (-g,)

    return _node(-a.data, "neg", (a,), backward)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    p = float(exponent)

    def backward(g):
        return (g * p * np.power(a.data, p - 1.0),)

    with np.errstate(invalid="ignore"):
        out = np.power(a.data, p)
    return _node(out, "power", (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _node(np.maximum(a.data, 0.0), "relu", (a,), backward)


def prelu(a, slope) -> Tensor:
    """Parametric ReLU; ``slope`` is a scalar tensor (trainable or fixed)."""
    a, slope = _wrap(a), _wrap(slope)
    if slope.data.size != 1:
        raise ParameterError("prelu slope must be a scalar")
    mask = a.data < 0.0
    out = np.where(mask, float(slope.data) * a.data, a.data)

    def backward(g):
        ga = g * np.where(mask, float(slope.data), 1.0) if a.requires_grad else None
        gs = None
        if slope.requires_grad:
            gs = np.asarray((g * np.where(mask, a.data, 0.0)).sum()).reshape(slope.shape)
        return (ga, gs)

    return _node(out, "prelu", (a, slope), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, "tanh", (a,), backward)


# ---------------------------------------------------------------------- #
# reductions and shape
# ---------------------------------------------------------------------- #

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims and a.ndim:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(a.data.sum(axis=axes if a.ndim else None, keepdims=keepdims), "sum", (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = float(np.prod([a.shape[i] for i in axes])) if a.ndim else 1.0

    def backward(g):
        if not keepdims and a.ndim:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return _node(a.data.mean(axis=axes if a.ndim else None, keepdims=keepdims), "mean", (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), "reshape", (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _node(a.data.transpose(axes), "transpose", (a,), backward)


# ---------------------------------------------------------------------- #
# linear algebra
# ---------------------------------------------------------------------- #

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not align")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _node(a.data @ b.data, "matmul", (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with x:(N,I), weight:(O,I)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear shapes {x.shape} x {weight.shape} do not align")
    out = x.data @ weight.data.T
    if bias is None:
        def backward(g):
            return (g @ weight.data if x.requires_grad else None,
                    g.T @ x.data if weight.requires_grad else None)

        return _node(out, "linear", (x, weight), backward)

    bias = _wrap(bias)

    def backward_b(g):
        return (g @ weight.data if x.requires_grad else None,
                g.T @ x.data if weight.requires_grad else None,
                g.sum(axis=0) if bias.requires_grad else None)

    return _node(out + bias.data, "linear", (x, weight, bias), backward_b)


def dot(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError("dot expects 1-D tensors of equal length")

    def backward(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _node(np.dot(a.data, b.data), "dot", (a, b), backward)


def l2_norm(a) -> Tensor:
    """Euclidean norm of the flattened tensor (subgradient 0 at the origin)."""
    a = _wrap(a)
    n = float(np.sqrt((a.data * a.data).sum()))

    def backward(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g * (a.data / n),)

    return _node(np.asarray(n), "l2_norm", (a,), backward)


def gather_rows(table, index) -> Tensor:
    """Select rows of a (R, C) table by an integer index vector."""
    table = _wrap(table)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ParameterError(f"row index out of range [0, {table.shape[0]})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _node(table.data[idx], "gather_rows", (table,), backward)


# ---------------------------------------------------------------------- #
# spatial ops (NCHW unless noted; upsampling also accepts bare 2-D maps)
# ---------------------------------------------------------------------- #

def upsample_nearest(a, factor: int) -> Tensor:
    a = _wrap(a)
    f = int(factor)
    if f < 1:
        raise ParameterError("upsample factor must be >= 1")
    if a.ndim < 2:
        raise DimensionError("upsample_nearest needs at least 2 dims")
    if f == 1:
        return reshape(a, a.shape)  # still a tape node, keeps gradients flowing
    out = np.repeat(np.repeat(a.data, f, axis=-2), f, axis=-1)
    lead = a.shape[:-2]
    h, w = a.shape[-2:]

    def backward(g):
        return (g.reshape(*lead, h, f, w, f).sum(axis=(-3, -1)),)

    return _node(out, "upsample_nearest", (a,), backward)


def downsample_nearest(a, factor: int) -> Tensor:
    """Keep every ``factor``-th pixel; spatial dims must divide evenly."""
    a = _wrap(a)
    f = int(factor)
    if f < 1:
        raise ParameterError("downsample factor must be >= 1")
    if a.ndim < 2:
        raise DimensionError("downsample_nearest needs at least 2 dims")
    h, w = a.shape[-2:]
    if h % f or w % f:
        raise ParameterError(f"spatial dims {h}x{w} not divisible by factor {f}")
    out = a.data[..., ::f, ::f].copy()

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[..., ::f, ::f] = g
        return (ga,)

    return _node(out, "downsample_nearest", (a,), backward)


def avg_pool2d(a, k: int) -> Tensor:
    a = _wrap(a)
    k = int(k)
    if k < 1:
        raise ParameterError("pool size must be >= 1")
    h, w = a.shape[-2:]
    if h % k or w % k:
        raise ParameterError(f"spatial dims {h}x{w} not divisible by pool {k}")
    lead = a.shape[:-2]
    out = a.data.reshape(*lead, h // k, k, w // k, k).mean(axis=(-3, -1))

    def backward(g):
        g = g.reshape(*lead, h // k, 1, w // k, 1) / (k * k)
        return (np.broadcast_to(g, (*lead, h // k, k, w // k, k)).reshape(a.shape).copy(),)

    return _node(out, "avg_pool2d", (a,), backward)


def global_avg_pool(a) -> Tensor:
    a = _wrap(a)
    if a.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW input")
    return reduce_mean(a, axis=(2, 3))


def shift2d(a, dy: int, dx: int) -> Tensor:
    """Translate the last two axes by integer offsets, zero-filling vacated cells."""
    a = _wrap(a)
    if a.ndim < 2:
        raise DimensionError("shift2d needs at least 2 dims")
    dy, dx = int(dy), int(dx)
    h, w = a.shape[-2:]
    out = np.zeros_like(a.data)
    dst_r = slice(max(dy, 0), h + min(dy, 0))
    dst_c = slice(max(dx, 0), w + min(dx, 0))
    src_r = slice(max(-dy, 0), h + min(-dy, 0))
    src_c = slice(max(-dx, 0), w + min(-dx, 0))
    if dst_r.start < dst_r.stop and dst_c.start < dst_c.stop:
        out[..., dst_r, dst_c] = a.data[..., src_r, src_c]

    def backward(g):
        ga = np.zeros_like(a.data)
        if dst_r.start < dst_r.stop and dst_c.start < dst_c.stop:
            ga[..., src_r, src_c] = g[..., dst_r, dst_c]
        return (ga,)

    return _node(out, "shift2d", (a,), backward)


# ---------------------------------------------------------------------- #
# convolution
# ---------------------------------------------------------------------- #

def _im2col(xp: Array, kh: int, kw: int, stride: int, oh: int, ow: int) -> Array:
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an OIkk kernel."""
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIkk kernel")
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    if ci != c:
        raise DimensionError(f"kernel expects {ci} input channels, input has {c}")
    stride, pad = int(stride), int(pad)
    if stride < 1 or pad < 0:
        raise ParameterError("stride must be >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError("kernel larger than padded input")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if pad:
        xp = np.zeros((n, c, hp, wp), dtype=np.float64)
        xp[:, :, pad:pad + h, pad:pad + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    w2 = kernel.data.reshape(o, c * kh * kw)
    out = np.matmul(w2[None], cols).reshape(n, o, oh, ow)

    b = _wrap(bias) if bias is not None else None
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)

    # keep the column matrix for the weight gradient only while training;
    # frozen-kernel passes (projection, rendering) stay memory-light
    cols_cache = cols if kernel.requires_grad else None
    cols = None

    def backward(g):
        g2 = g.reshape(n, o, oh * ow)
        gw = gx = gb = None
        if kernel.requires_grad:
            cols_b = cols_cache if cols_cache is not None else _im2col(xp, kh, kw, stride, oh, ow)
            gw = np.matmul(g2, cols_b.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        if x.requires_grad:
            dcols = np.matmul(w2.T[None], g2).reshape(n, c, kh, kw, oh, ow)
            gxp = np.zeros((n, c, hp, wp), dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(b.shape)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, kernel) if b is None else (x, kernel, b)
    return _node(out, "conv2d", parents, backward)


# ---------------------------------------------------------------------- #
# statistics
# ---------------------------------------------------------------------- #

def batch_stats(f) -> tuple[Tensor, Tensor]:
    """Per-channel mean and biased variance over batch and spatial axes."""
    f = _wrap(f)
    if f.ndim != 4:
        raise DimensionError("batch_stats expects NCHW input")
    n, c, h, w = f.shape
    if n * h * w < 1:
        raise DimensionError("batch_stats needs at least one element per channel")
    m = reduce_mean(f, axis=(0, 2, 3))
    centered = sub(f, reshape(m, (1, c, 1, 1)))
    v = reduce_mean(mul(centered, centered), axis=(0, 2, 3))
    return m, v
