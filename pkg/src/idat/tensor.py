"""Dense float32 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient::

    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    x.grad  # == 2 * x.data

Storage is float32.  Matmul and reductions accumulate in float64 and round
once on output.  :func:`precision` switches storage to float64 for the
duration of a ``with`` block; the finite-difference checker uses it so that
its oracle is not dominated by float32 rounding.
"""
from __future__ import annotations

import contextvars
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError, UsageError

_storage = contextvars.ContextVar("idat_storage_dtype", default=np.float32)
_local = threading.local()

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def storage_dtype():
    return _storage.get()


@contextmanager
def precision(dtype):
    """Temporarily change the storage dtype of newly created tensors."""
    token = _storage.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _storage.reset(token)


class Tensor:
    """An n-dimensional float array that can take part in differentiation.

    ``shape`` always has at least one dimension; scalars are shape ``(1,)``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=storage_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError(f"tensors must be non-empty, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Backward


@dataclass
class Tape:
    """Ordered record of the operations executed while the tape is active."""

    nodes: list[Node] = field(default_factory=list)
    _done: bool = False

    def __enter__(self) -> "Tape":
        if self._done:
            raise UsageError("tape was already differentiated; call reset() first")
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tapes must be exited in LIFO order")
        stack.pop()

    def reset(self) -> None:
        self.nodes.clear()
        self._done = False

    def _record(self, op: str, inputs: tuple[Tensor, ...], out: Tensor, backward: Backward) -> None:
        self.nodes.append(Node(op, inputs, out, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Populate ``.grad`` on every tensor that requires it.

        Tensors recorded on the tape but unreachable from ``loss``, and any
        extra ``params``, receive zero gradients.  Previous ``.grad`` values
        are overwritten, not accumulated.
        """
        if self._done:
            raise UsageError("backward() called twice on the same tape without reset()")
        if loss.shape != (1,):
            raise DimensionError(f"loss must have shape (1,), got {loss.shape}")
        self._done = True
        params = list(params)
        leaves = [t for node in self.nodes for t in node.inputs if t.requires_grad] + params
        for t in leaves:
            t.grad = None
        grads: dict[int, np.ndarray] = {id(loss): np.ones(1)}
        owners: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g.astype(node.out.data.dtype)
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                owners[k] = t
                grads[k] = grads[k] + gi if k in grads else gi
        for k, g in grads.items():
            t = owners[k]
            t.grad = g.astype(t.data.dtype)
        for t in leaves:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] = ()) -> None:
    tape.backward(loss, params)


# ----------------------------------------------------------------------------
# recording helpers


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")
    return arr


def _emit(op: str, arr: np.ndarray, inputs: tuple[Tensor, ...], backward: Backward) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        arr = np.asarray(arr, dtype=storage_dtype())
    arr = _finite(arr, op)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    rg = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, rg)
    if rg:
        tape = current_tape()
        if tape is not None:
            tape._record(op, inputs, out, backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64, copy=False)


def _check_broadcast(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == b or a == (1,) or b == (1,):
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[-len(short):] == short:
        return
    raise DimensionError(f"{op}: cannot combine shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, d in enumerate(shape):
        if d == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)

    def back(g):
        return _unbroadcast(g * _f64(b), a.shape), _unbroadcast(g * _f64(a), b.shape)

    return _emit("mul", a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a.shape, b.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def back(g):
        bb = _f64(b)
        return _unbroadcast(g / bb, a.shape), _unbroadcast(-g * _f64(a) / (bb * bb), b.shape)

    return _emit("div", out, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant (no gradient w.r.t. ``c``)."""
    c = float(c)
    return _emit("scale", x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _emit("log", out, (x,), lambda g: (g / _f64(x),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(_f64(x))
    return _emit("exp", out, (x,), lambda g: (g * out,))


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(_f64(x))
    with np.errstate(divide="ignore"):
        return _emit("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def abs_(x: Tensor) -> Tensor:
    return _emit("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(_f64(x)),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    xx = _f64(x)
    cdf = 0.5 * (1.0 + erf(xx / math.sqrt(2.0)))

    def back(g):
        pdf = np.exp(-0.5 * xx * xx) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + xx * pdf),)

    return _emit("gelu", xx * cdf, (x,), back)


# ----------------------------------------------------------------------------
# reductions


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim} dimensions")
    return axis % ndim


def sum_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        out = np.sum(x.data, dtype=np.float64).reshape(1)
        return _emit("sum", out, (x,), lambda g: (np.broadcast_to(g.reshape(()), shape),))
    ax = _norm_axis(axis, x.ndim)
    out = np.sum(x.data, axis=ax, dtype=np.float64, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g.reshape(shape[:ax] + shape[ax + 1:]), ax)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", out, (x,), back)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[_norm_axis(axis, x.ndim)]
    s = sum_(x, axis, keepdims)
    return scale(s, 1.0 / n)


# ----------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supports ``[m, k] @ [k, n]``, batched ``[..., m, k] @ [k, n]`` (a shared
    right operand, as in a linear layer) and ``[..., m, k] @ [..., k, n]``
    with identical leading dimensions.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    a64, b64 = _f64(a), _f64(b)
    out = np.matmul(a64, b64)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b64, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a64.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a64, -1, -2), g)
        return ga, gb

    return _emit("matmul", out, (a, b), back)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _emit("transpose", out, (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    old = x.shape
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    ax = _norm_axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _emit("concat", out, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)))


def getitem(x: Tensor, index) -> Tensor:
    """NumPy-style indexing; the gradient scatters back with ``np.add.at``."""
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    if isinstance(index, tuple):
        index = tuple(i.data.astype(np.int64) if isinstance(i, Tensor) else i for i in index)
    out = x.data[index]
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g.reshape(np.shape(x.data[index])))
        return (full,)

    return _emit("getitem", np.array(out, copy=True), (x,), back)


# ----------------------------------------------------------------------------
# normalisation


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    z = _f64(x)
    e = np.exp(z - z.max(axis=ax, keepdims=True))
    s = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return _emit("softmax", s, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    z = _f64(x)
    shifted = z - z.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return _emit("log_softmax", out, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must match last dim {d}"
        )
    xx = _f64(x)
    mu = xx.mean(axis=-1, keepdims=True)
    var = ((xx - mu) ** 2).mean(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xx - mu) * inv
    g64, b64 = _f64(gamma), _f64(beta)

    def back(g):
        dxhat = g * g64
        dx = inv / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta

    return _emit("layer_norm", xhat * g64 + b64, (x, gamma, beta), back)
