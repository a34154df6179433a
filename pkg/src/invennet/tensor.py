"""Dense float tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array (float32 by default; float64 is accepted so
that gradient checks can run at double precision).  Every differentiable
operation applied to a tensor that requires gradients records a node stamped
with a global sequence number.  ``gradients``/``Tensor.backward`` collect the
nodes reachable from a scalar loss and replay them in reverse recording order,
so each node is visited exactly once and results do not depend on hashing or
traversal order.

Broadcasting follows numpy rules; gradients are summed back to the operand
shape.  Reductions accumulate in float64.
"""

from __future__ import annotations

import contextlib
import functools
import itertools
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError

_sequence = itertools.count()


class _Mode:
    grad_enabled = True
    debug = False


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference, detached fakes)."""
    previous = _Mode.grad_enabled
    _Mode.grad_enabled = False
    try:
        yield
    finally:
        _Mode.grad_enabled = previous


@contextlib.contextmanager
def debug_mode(enabled=True):
    """Check every op result for NaN/Inf and every divisor for |v| < 1e-12."""
    previous = _Mode.debug
    _Mode.debug = enabled
    try:
        yield
    finally:
        _Mode.debug = previous


def is_grad_enabled():
    return _Mode.grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        self.data = _contig(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = -1
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._seq < 0

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype):
        """Differentiable dtype cast (used to lift models to float64)."""
        src = self.data.dtype
        return _result(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "astype")

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        for leaf, g in _run_backward(self).items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # numpy-style operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def exp(self):
        return exp(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return abs_(self)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _contig(arr, dtype=None):
    """Like np.ascontiguousarray but keeps 0-d arrays 0-d."""
    arr = np.asarray(arr, dtype=dtype)
    return arr if arr.flags.c_contiguous else arr.copy()


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=np.float32):
    return Tensor(data, requires_grad=True, dtype=dtype)


def _as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def _result(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _Mode.grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._backward = backward
        out._seq = next(_sequence)
    else:
        out._parents = ()
        out._backward = None
        out._seq = -1
    out._op = op
    if _Mode.debug and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = np.asarray(grad.sum(axis=0))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.asarray(grad)


# ---------------------------------------------------------------- backward


def _run_backward(loss):
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return {}
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._seq < 0 or id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(t._parents)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

    pending = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in order:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
            if parent._seq < 0:
                leaves[key] = parent
    return {leaf: pending[key] for key, leaf in leaves.items()}


def gradients(loss, params):
    """Return dLoss/dParam for each param; unreachable params get zeros."""
    found = _run_backward(loss)
    out = []
    for p in params:
        g = found.get(p)
        out.append(np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False))
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)
    if _Mode.debug and np.any(np.abs(b.data) < 1e-12):
        raise NumericError("div: divisor contains a value with |v| < 1e-12")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "div")


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a):
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                   lambda g: (g * mask,), "relu")


def lrelu(a, slope=0.2):
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope).astype(a.dtype)
    return _result(a.data * scale, (a,), lambda g: (g * scale,), "lrelu")


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient 1 inside the closed interval, 0 outside."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def abs_(a):
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sqrt(a):
    """Square root with zero (sub)gradient at 0."""
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, g / (2 * safe), 0).astype(a.dtype),)

    return _result(out, (a,), backward, "sqrt")


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "exp": exp, "tanh": tanh,
    "relu": relu, "lrelu": lrelu, "clamp": clamp, "square": square, "abs": abs_,
}


def elementwise(op_kind, *args, **kwargs):
    try:
        fn = ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = np.mean(a.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


# ---------------------------------------------------------------- structural


def reshape(a, shape):
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ContractError(f"reshape {src} -> {shape}: {exc}") from None
    return _result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes):
    inverse = np.argsort(axes)
    return _result(_contig(a.data.transpose(axes)), (a,),
                   lambda g: (_contig(g.transpose(inverse)),), "transpose")


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(_contig(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ContractError(f"concat: shapes {ref} and {t.shape} differ off axis {ax}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(_contig(p) for p in np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                   backward, "concat")


def concat_channels(tensors):
    return concat(tensors, axis=1)


def split(a, sizes: Sequence[int], axis=1):
    """Split along ``axis`` into pieces of the given sizes (must sum to the axis length)."""
    ax = axis % a.ndim
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes) or sum(sizes) != a.shape[ax]:
        raise ContractError(f"split sizes {sizes} do not partition axis of length {a.shape[ax]}")
    out = []
    start = 0
    for s in sizes:
        index = [slice(None)] * a.ndim
        index[ax] = slice(start, start + s)
        out.append(_slice(a, tuple(index)))
        start += s
    return out


def split_channels(a, point: int):
    """Split an N x C x ... tensor into channels [0, point) and [point, C)."""
    c = a.shape[1]
    if not 0 < point < c:
        raise ContractError(f"channel split point {point} outside (0, {c})")
    return tuple(split(a, [point, c - point], axis=1))


def _slice(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(_contig(a.data[index]), (a,), backward, "slice")


def upsample_nearest_2x(a):
    out = a.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        *lead, h2, w2 = g.shape
        return (g.reshape(*lead, h2 // 2, 2, w2 // 2, 2).sum(axis=(-3, -1)),)

    return _result(out, (a,), backward, "upsample_nearest_2x")


def separable(a, rows: np.ndarray, cols: np.ndarray, op="separable"):
    """Apply ``rows @ X @ cols.T`` to the last two axes (a linear spatial map)."""
    rows = rows.astype(a.dtype, copy=False)
    cols = cols.astype(a.dtype, copy=False)
    out = np.matmul(np.matmul(rows, a.data), cols.T)
    return _result(out, (a,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),), op)


@functools.lru_cache(maxsize=64)
def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source indices of a reflect-padded axis (edge sample not repeated)."""
    return np.pad(np.arange(n), pad, mode="reflect")


@functools.lru_cache(maxsize=64)
def box_matrix(n: int, radius: int) -> np.ndarray:
    """n x n averaging matrix for a (2r+1)-tap box window with reflect borders."""
    idx = reflect_index(n, radius)
    m = np.zeros((n, n), dtype=np.float64)
    width = 2 * radius + 1
    for i in range(n):
        np.add.at(m[i], idx[i:i + width], 1.0 / width)
    m.setflags(write=False)
    return m


def box_mean(a, radius: int):
    """Mean over a (2r+1) x (2r+1) window at every pixel, reflect-padded borders."""
    if radius < 0:
        raise ContractError(f"box_mean radius must be >= 0, got {radius}")
    h, w = a.shape[-2:]
    return separable(a, box_matrix(h, radius), box_matrix(w, radius), op="box_mean")


@functools.lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix for half-pixel-centred bilinear resampling."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        x = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(x))
        hi = min(lo + 1, n_in - 1)
        frac = x - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m.setflags(write=False)
    return m


def resize_bilinear(a, height: int, width: int):
    h, w = a.shape[-2:]
    if (h, w) == (height, width):
        return a
    return separable(a, bilinear_matrix(h, height), bilinear_matrix(w, width), op="resize")


def max_pool_2x(a):
    """2x2 max pooling with stride 2 (odd trailing rows/cols are dropped)."""
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ContractError(f"max_pool_2x: spatial size {h}x{w} too small")
    x = a.data[:, :, :2 * h2, :2 * w2]
    blocks = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = (np.arange(4) == arg[..., None]) * g[..., None]
        full = np.zeros_like(a.data)
        full[:, :, :2 * h2, :2 * w2] = (
            onehot.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        )
        return (full.astype(a.dtype),)

    return _result(_contig(out), (a,), backward, "max_pool_2x")


STRUCTURAL = {
    "concat_channels": concat_channels, "split_channels": split_channels,
    "upsample_nearest_2x": upsample_nearest_2x, "mean": mean, "sum": sum_,
    "box_mean": box_mean,
}


def structural(op_kind, *args, **kwargs):
    try:
        fn = STRUCTURAL[op_kind]
    except KeyError:
        raise ContractError(f"unknown structural op {op_kind!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- convolution


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of N x Cin x H x W input with Cout x Cin x kh x kw weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise ContractError(f"conv2d: input has Cin={c} but weight expects Cin={cin}")
    if bias is not None and bias.shape != (cout,):
        raise ContractError(f"conv2d: bias shape {bias.shape} does not match Cout={cout}")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: stride {stride} / padding {padding} invalid")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ContractError(
            f"conv2d: output size {ho}x{wo} not positive for H={h}, W={w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, _im2col(xp, kh, kw, stride, ho, wo))
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, cout, ho, wo)

    def backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            cols = _im2col(xp, kh, kw, stride, ho, wo)
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        if x.requires_grad and stride == 1:
            # stride 1: the input gradient is a full correlation with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            hp, wp = xp.shape[2:]
            gxp = np.matmul(wflip, _im2col(gp, kh, kw, 1, hp, wp)).reshape(xp.shape)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            gx = _contig(gx)
        elif x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            gx = _contig(gx)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv2d")


def stack_batch(tensors: Iterable[Tensor]):
    """Concatenate along the batch axis."""
    return concat(list(tensors), axis=0)
