"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

Every differentiable primitive returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output cotangent to parent cotangents.
Calling :func:`backward` on a scalar walks those records in reverse creation
order (the tape) and accumulates gradients into the leaves.

Broadcasting is deliberately narrow: an operand may be a scalar, or may be
broadcast against the other operand only when the result keeps the other
operand's shape (bias-add style). Anything else is a :class:`ShapeError`.
"""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError, UsageError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

# sums over more elements than this use a float64 accumulator
_WIDE_REDUCTION = 1024

_local = threading.local()
_seq = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops inside produce constant tensors."""
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    if isinstance(data, (np.float32, np.float64)):
        # numpy reductions on 0-d arrays hand back scalars; keep their precision
        return np.asarray(data)
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """Dense float array with optional gradient.

    Leaves created with ``requires_grad=True`` start with a zero gradient
    buffer so that a leaf untouched by a backward pass reports zeros.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"
        self._seq = next(_seq)

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # ------------------------------------------------------------- operators
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return reduce(self, "sum", axis)

    def mean(self, axis=None) -> "Tensor":
        return reduce(self, "mean", axis)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


# ------------------------------------------------------------------ tape walk
def backward(loss: Tensor, grad_output=None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward() expects a Tensor")
    if grad_output is None:
        if loss.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad_output = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    tape = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        tape.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    tape.sort(key=lambda n: n._seq, reverse=True)

    pending = {id(loss): np.asarray(grad_output, dtype=loss.dtype)}
    for node in tape:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.dtype, copy=True)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# --------------------------------------------------------------- broadcasting
def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(b) == 0 or int(np.prod(b)) == 1 and len(b) <= len(a):
        return a
    if len(a) == 0 or int(np.prod(a)) == 1 and len(a) <= len(b):
        return b
    for big, small in ((a, b), (b, a)):
        if len(small) <= len(big):
            tail = big[len(big) - len(small):]
            if all(s == t or s == 1 for s, t in zip(small, tail)):
                return big
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; gradients dA = dC·Bᵀ and dB = Aᵀ·dC."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _result(x.data.T, (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc
    src = x.shape
    return _result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather ``x`` along ``axis``; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[axis] or idx.max() >= x.shape[axis]):
        raise ShapeError(f"index out of range for axis {axis} of shape {x.shape}")
    src = x.shape

    def bw(g):
        full = np.zeros(src, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(x.data, idx, axis=axis), (x,), bw, "take")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tuple(tensors), bw, "stack")


# -------------------------------------------------------------- reductions
def _sum(a: np.ndarray, axis, keepdims=False) -> np.ndarray:
    if a.dtype == np.float32 and a.size > _WIDE_REDUCTION:
        return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    return np.sum(a, axis=axis, keepdims=keepdims)


def reduce(x: Tensor, kind: str = "sum", axis=None) -> Tensor:
    """Sum or mean over ``axis`` (an int, a tuple of ints, or None for all)."""
    if kind not in ("sum", "mean"):
        raise UsageError(f"unknown reduction {kind!r}")
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            if not -x.ndim <= ax < x.ndim:
                raise ShapeError(f"axis {ax} out of range for shape {x.shape}")
        axes = tuple(sorted(ax % x.ndim for ax in axes))
    else:
        axes = tuple(range(x.ndim))
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = _sum(x.data, axes)
    scale = 1.0
    if kind == "mean":
        scale = 1.0 / count
        out = out * x.dtype.type(scale)
    out = np.asarray(out, dtype=x.dtype)
    src = x.shape

    def bw(g):
        g = np.expand_dims(g, axes) if axes else g
        g = np.broadcast_to(g, src)
        return ((g * x.dtype.type(scale)) if scale != 1.0 else g.copy(),)

    return _result(out, (x,), bw, kind)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    return reduce(x, "sum", axis)


def mean(x: Tensor, axis=None) -> Tensor:
    return reduce(x, "mean", axis)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return _result(out, (x,), bw, "logsumexp")


# ------------------------------------------------------------- elementwise
def elementwise(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Apply a pointwise nonlinearity with its matching derivative."""
    d = x.data
    one = d.dtype.type(1)
    if kind == "relu":
        out = np.maximum(d, 0)
        return _result(out, (x,), lambda g: (g * (d > 0),), kind)
    if kind == "leaky_relu":
        s = d.dtype.type(slope)
        pos = d > 0
        out = np.where(pos, d, s * d)
        return _result(out, (x,), lambda g: (np.where(pos, g, s * g),), kind)
    if kind == "tanh":
        out = np.tanh(d)
        return _result(out, (x,), lambda g: (g * (one - out * out),), kind)
    if kind == "sigmoid":
        out = d.dtype.type(0.5) * (one + np.tanh(d.dtype.type(0.5) * d))
        return _result(out, (x,), lambda g: (g * out * (one - out),), kind)
    if kind == "selu":
        lam, alpha = d.dtype.type(SELU_LAMBDA), d.dtype.type(SELU_ALPHA)
        ex = np.exp(np.minimum(d, 0))
        out = np.where(d > 0, lam * d, lam * alpha * (ex - one))
        return _result(out, (x,), lambda g: (g * np.where(d > 0, lam, lam * alpha * ex),), kind)
    if kind == "softplus":
        out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
        sig = d.dtype.type(0.5) * (one + np.tanh(d.dtype.type(0.5) * d))
        return _result(out, (x,), lambda g: (g * sig,), kind)
    if kind == "square":
        return _result(d * d, (x,), lambda g: (g * 2 * d,), kind)
    if kind == "exp":
        out = np.exp(d)
        return _result(out, (x,), lambda g: (g * out,), kind)
    if kind == "log":
        if np.any(d <= 0):
            raise DomainError("log of a nonpositive entry")
        return _result(np.log(d), (x,), lambda g: (g / d,), kind)
    if kind == "sqrt":
        if np.any(d < 0):
            raise DomainError("sqrt of a negative entry")
        out = np.sqrt(d)
        return _result(out, (x,), lambda g: (g / (2 * out),), kind)
    raise UsageError(f"unknown elementwise kind {kind!r}")


def relu(x):
    return elementwise(x, "relu")


def leaky_relu(x, slope=0.2):
    return elementwise(x, "leaky_relu", slope)


def tanh(x):
    return elementwise(x, "tanh")


def sigmoid(x):
    return elementwise(x, "sigmoid")


def selu(x):
    return elementwise(x, "selu")


def softplus(x):
    return elementwise(x, "softplus")


def square(x):
    return elementwise(x, "square")


def exp(x):
    return elementwise(x, "exp")


def log(x):
    return elementwise(x, "log")


def sqrt(x):
    return elementwise(x, "sqrt")


# ------------------------------------------------------------- convolutions
def conv1d_valid(u: Tensor, a: Tensor) -> Tensor:
    """Stride-1 valid cross-correlation, ``v[i] = sum_j u[i+j] * a[j]``."""
    u, a = _coerce(u), _coerce(a)
    if u.ndim != 1 or a.ndim != 1:
        raise ShapeError(f"conv1d_valid expects vectors, got {u.shape} and {a.shape}")
    if a.shape[0] > u.shape[0]:
        raise ShapeError(f"filter length {a.shape[0]} exceeds input length {u.shape[0]}")
    win = sliding_window_view(u.data, a.shape[0])

    def bw(g):
        gu = np.convolve(g, a.data, mode="full") if u.requires_grad else None
        ga = win.T @ g if a.requires_grad else None
        return gu, ga

    return _result(win @ a.data, (u, a), bw, "conv1d")


def _out_size(n: int, f: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - f) // stride + 1


def _phases(xp: np.ndarray, stride: int) -> np.ndarray:
    """Reorder (N, C, Hp, Wp) into phase-major (C, N, s, s, ceil(Hp/s), ceil(Wp/s))."""
    n, c, hp, wp = xp.shape
    hq, wq = -(-hp // stride), -(-wp // stride)
    if (hq * stride, wq * stride) != (hp, wp):
        xp = np.pad(xp, ((0, 0), (0, 0), (0, hq * stride - hp), (0, wq * stride - wp)))
    return xp.reshape(n, c, hq, stride, wq, stride).transpose(1, 0, 3, 5, 2, 4)


def _im2col(xp: np.ndarray, f: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather (N, C, Hp, Wp) into a (C*f*f, N*Ho*Wo) column matrix."""
    n, c = xp.shape[:2]
    ph = np.ascontiguousarray(_phases(xp, stride))
    cols = np.empty((c, f, f, n, ho, wo), dtype=xp.dtype)
    for i in range(f):
        qi, ri = divmod(i, stride)
        for j in range(f):
            qj, rj = divmod(j, stride)
            cols[:, i, j] = ph[:, :, ri, rj, qi:qi + ho, qj:qj + wo]
    return cols.reshape(c * f * f, n * ho * wo)


def _col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, f: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns into (N, C, Hp, Wp)."""
    cols = cols.reshape(c, f, f, n, ho, wo)
    hq, wq = -(-hp // stride), -(-wp // stride)
    ph = np.zeros((c, n, stride, stride, hq, wq), dtype=cols.dtype)
    for i in range(f):
        qi, ri = divmod(i, stride)
        for j in range(f):
            qj, rj = divmod(j, stride)
            ph[:, :, ri, rj, qi:qi + ho, qj:qj + wo] += cols[:, i, j]
    out = ph.transpose(1, 0, 4, 2, 5, 3).reshape(n, c, hq * stride, wq * stride)
    return out[:, :, :hp, :wp]


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected C×H×W or N×C×H×W input, got shape {x.shape}")
    return x, False


def _pad(a: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return a
    return np.pad(a, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Multi-channel cross-correlation (no kernel flip) plus per-channel bias.

    ``x`` is N×C_in×H×W (or C_in×H×W), ``w`` is C_out×C_in×f×f.
    """
    x, w = _coerce(x), _coerce(w)
    x, squeeze = _batched(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d filter shape {w.shape} incompatible with input {x.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    n, cin, h, wd = x.shape
    cout, f = w.shape[0], w.shape[2]
    ho, wo = _out_size(h, f, stride, padding), _out_size(wd, f, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output size {ho}×{wo} is not positive for input {x.shape}")
    cols = _im2col(_pad(x.data, padding), f, stride, ho, wo)
    w2 = w.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, n, ho, wo)
    if b is not None:
        out += b.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        if x.requires_grad:
            gxp = _col2im(w2.T @ g2, n, cin, h + 2 * padding, wd + 2 * padding,
                          f, stride, ho, wo)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd]
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    out_t = _result(out, parents, bw, "conv2d")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` (a.k.a. transposed convolution).

    ``w`` is C_in×C_out×f×f, i.e. the filter of the conv2d that maps the output
    back to the input. Output size is ``(H-1)*stride - 2*padding + f``.
    """
    x, w = _coerce(x), _coerce(w)
    x, squeeze = _batched(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[0] != x.shape[1]:
        raise ShapeError(f"conv_transpose2d filter shape {w.shape} incompatible with input {x.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    n, cin, h, wd = x.shape
    cout, f = w.shape[1], w.shape[2]
    ho = (h - 1) * stride - 2 * padding + f
    wo = (wd - 1) * stride - 2 * padding + f
    if ho < 1 or wo < 1 or _out_size(ho, f, stride, padding) != h:
        raise ShapeError(f"inconsistent transposed-conv geometry for input {x.shape}, "
                         f"filter {f}, stride {stride}, padding {padding}")
    w2 = w.data.reshape(cin, -1)
    x2 = x.data.transpose(1, 0, 2, 3).reshape(cin, -1)
    full = _col2im(w2.T @ x2, n, cout, ho + 2 * padding, wo + 2 * padding, f, stride, h, wd)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if b is not None:
        out = out + b.data[:, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        gcols = _im2col(_pad(g, padding), f, stride, h, wd)
        if x.requires_grad:
            gx = (w2 @ gcols).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
        if w.requires_grad:
            gw = (x2 @ gcols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    out_t = _result(out, parents, bw, "conv_transpose2d")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Training-mode batch normalization over every axis except axis 1.

    Returns ``(out, batch_mean, batch_var)`` with the statistics as numpy
    arrays (biased variance) for the caller's running averages.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    count = int(np.prod([x.shape[a] for a in axes]))
    if x.shape[0] < 2:
        raise UsageError("batch normalization in train mode needs a batch of at least 2")
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    d = x.data
    mu = d.mean(axis=axes, keepdims=True, dtype=np.float64).astype(d.dtype)
    xc = d - mu
    var = (xc * xc).mean(axis=axes, keepdims=True, dtype=np.float64).astype(d.dtype)
    inv = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = xc * inv
    g_ = gamma.data.reshape(shape)
    out = xhat * g_ + beta.data.reshape(shape)

    def bw(g):
        gx = None
        if x.requires_grad:
            gxhat = g * g_
            s1 = gxhat.sum(axis=axes, keepdims=True)
            s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
            gx = (inv / count) * (count * gxhat - s1 - xhat * s2)
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    out_t = _result(out, (x, gamma, beta), bw, "batch_norm")
    return out_t, mu.reshape(-1), var.reshape(-1)
