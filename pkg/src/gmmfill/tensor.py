"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape`; with no tape
active they run as plain numpy and nothing is recorded. A fresh tape is
built for every training step::

    with Tape() as tape:
        loss = tensor.mean(tensor.square(w * x))
    tape.backward(loss)
    w.grad

Binary elementwise operations accept equal shapes or a scalar operand,
nothing else. Bias broadcasting lives inside :func:`linear` and
:func:`conv2d`.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    A tape belongs to the thread that opened it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``.

        Leaves are tensors with ``requires_grad`` that were not produced on
        this tape. The tape itself is left intact, so it can be replayed.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if id(loss) not in self._produced:
            if loss.requires_grad:
                _accumulate_leaf(loss, grads[id(loss)])
            return
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in self._produced:
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    _accumulate_leaf(t, gi)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, tuple(inputs), backward)
        else:
            out.requires_grad = False
    return out


# ---------------------------------------------------------------------------
# elementwise


def _operands(a: Tensor, b: Tensor, op: str) -> tuple[np.ndarray, np.ndarray]:
    if a.shape == b.shape:
        return a.data, b.data
    # the scalar side is the one that gets broadcast; between two size-1
    # operands the result keeps the higher-rank shape
    if b.size == 1 and (a.size != 1 or a.data.ndim >= b.data.ndim):
        return a.data, b.data.reshape(())
    if a.size == 1:
        return a.data.reshape(()), b.data
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # undo scalar broadcast
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operands(a, b, "add")
    return _make(ad + bd, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operands(a, b, "sub")
    return _make(ad - bd, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operands(a, b, "mul")
    return _make(
        ad * bd,
        (a, b),
        lambda g: (
            _reduce_to(g * bd, a) if a.requires_grad else None,
            _reduce_to(g * ad, b) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operands(a, b, "div")
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (
            _reduce_to(g / bd, a) if a.requires_grad else None,
            _reduce_to(-g * out / bd, b) if b.requires_grad else None,
        ),
    )


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.data)  # subgradient 0 at 0
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


_UNARY = {
    "relu": relu,
    "exp": exp,
    "log": log,
    "square": square,
    "abs": abs,
    "sigmoid": sigmoid,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None, slope: float = 0.2) -> Tensor:
    """Dispatch an elementwise op by name (``leaky_relu`` takes ``slope``)."""
    if op_kind in _BINARY:
        if b is None:
            raise TypeError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind == "leaky_relu":
        return leaky_relu(as_tensor(a), slope)
    if op_kind in _UNARY:
        return _UNARY[op_kind](as_tensor(a))
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """``a[..., start:stop, ...]`` along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``a[b, index[b]]`` for every batch row ``b`` (index is constant)."""
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[rows, index] = g
        return (full,)

    return _make(a.data[rows, index], (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(
        ad @ bd,
        (a, b),
        lambda g: (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        ),
    )


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for ``x`` of shape (N, in) and ``w`` of shape (out, in)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, inputs, bw)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, with max subtraction."""
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax: non-finite logits")
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax: need at least one entry, got shape {logits.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (logits,), bw)


# target size (in doubles) of one im2col block
CONV_CHUNK = 32768


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """2-D cross-correlation.

    ``x`` is (C, H, W) or a batch (N, C, H, W); ``w`` is (F, C, kh, kw).
    """
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride {stride} / padding {padding}")
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} / kernels {w.shape} have wrong rank")
    n, c, h, wd_ = xd.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels {w.shape} expect {cw}")
    if h + 2 * padding < kh or wd_ + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape} (padding {padding})"
        )
    oh, ow = _conv_out(h, kh, stride, padding), _conv_out(wd_, kw, stride, padding)
    xd = np.ascontiguousarray(xd)
    wmat = w.data.reshape(f, c * kh * kw)
    # im2col a few images at a time so the column matrix stays in cache
    step = max(1, CONV_CHUNK // (c * kh * kw * oh * ow))
    chunks = [(a, min(a + step, n)) for a in range(0, n, step)]

    def columns(a, e):
        return kernels.im2col(xd[a:e], kh, kw, stride, padding, oh, ow)  # (c*kh*kw, m*oh*ow)

    out = np.empty((n, f, oh, ow))
    for a, e in chunks:
        res = (wmat @ columns(a, e)).reshape(f, e - a, oh, ow)
        if b is not None:
            res += b.data[:, None, None, None]
        out[a:e] = res.transpose(1, 0, 2, 3)
    if single:
        out = out[0]
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        g4 = g[None] if single else g
        gw = np.zeros((f, c * kh * kw)) if w.requires_grad else None
        gx = np.empty((n, c, h, wd_)) if x.requires_grad else None
        for a, e in chunks:
            gmat = np.ascontiguousarray(g4[a:e].transpose(1, 0, 2, 3)).reshape(f, (e - a) * oh * ow)
            if gw is not None:
                gw += gmat @ columns(a, e).T
            if gx is not None:
                gx[a:e] = kernels.col2im(wmat.T @ gmat, e - a, c, h, wd_, kh, kw, stride, padding, oh, ow)
        if gw is not None:
            gw = gw.reshape(w.shape)
        if gx is not None and single:
            gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return _make(out, inputs, bw)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling of (N, C, H, W)."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _make(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))
