"""
Dense float64 tensors with reverse-mode gradients.

Each operation returns a new Tensor holding a numpy array. When any input
requires a gradient (and recording is enabled for the calling thread), the
result remembers its parents and a closure mapping the upstream gradient
to one gradient per parent. `backward` walks that graph in reverse
topological order.

Usage:
    from chunkvid import tensor as T

    w = T.Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    x = T.Tensor([[0.0], [1.0]])
    loss = T.mean(T.matmul(w, x))
    T.backward(loss)
    w.grad  # d loss / d w
"""

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Union

import numpy as np

from chunkvid.errors import DimensionError, FullyMaskedRowError, NumericError, ZeroNormError


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording for the calling thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._grad_fn: Optional[GradFn] = None

    @classmethod
    def _result(cls, arr: np.ndarray, op: str, parents: tuple, grad_fn: GradFn) -> "Tensor":
        _check_finite(arr, op)
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out.data = arr
        out.grad = None
        out.op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._grad_fn = grad_fn if track else None
        return out

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", self.shape)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.op = "detach"
        out._parents = ()
        out._grad_fn = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("Tensor division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, np.ndarray, float, int, list]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# =============================================================================
# Elementwise
# =============================================================================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, "add", (a, b), grad_fn)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, "sub", (a, b), grad_fn)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, "mul", (a, b), grad_fn)


def scale(a: TensorLike, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return Tensor._result(a.data * k, "scale", (a,), lambda g: (g * k,))


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor._result(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._result(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log of a non-positive value")
    return Tensor._result(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def clip(a: TensorLike, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


# =============================================================================
# Reductions
# =============================================================================

def _reduce_grad(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return Tensor._result(
        out, "sum", (a,), lambda g: (_reduce_grad(g, a.shape, axis, keepdims),)
    )


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(np.asarray(out).size, 1)
    return Tensor._result(
        out, "mean", (a,), lambda g: (_reduce_grad(g, a.shape, axis, keepdims) / count,)
    )


# =============================================================================
# Linear algebra and attention
# =============================================================================

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape) from None

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(np.matmul(a.data, b.data), "matmul", (a, b), grad_fn)


def masked_softmax(logits: TensorLike, mask) -> Tensor:
    """Softmax over the last axis; mask entries are 0 (keep) or -inf (drop)."""
    logits = as_tensor(logits)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if mask.shape != logits.shape:
        raise DimensionError("masked_softmax", logits.shape, mask.shape)
    keep = mask == 0.0
    if not keep.any(axis=-1).all():
        raise FullyMaskedRowError()

    z = np.where(keep, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, "masked_softmax", (logits,), grad_fn)


def layer_norm(x: TensorLike, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def grad_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return Tensor._result(xhat, "layer_norm", (x,), grad_fn)


# =============================================================================
# Shape plumbing
# =============================================================================

def concatenate(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concatenate", ())
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise DimensionError("concatenate", parts[0].shape, parts[-1].shape) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, "concatenate", tuple(parts), grad_fn)


def reshape(a: TensorLike, shape: tuple) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", a.shape, tuple(shape)) from None
    return Tensor._result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: TensorLike, axes: tuple) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return Tensor._result(
        np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inverse),)
    )


def index_select(a: TensorLike, indices, axis: int = 0) -> Tensor:
    """Gather positions `indices` along `axis`."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, idx, axis=axis)

    def grad_fn(g):
        full = np.zeros(a.shape)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._result(out, "index_select", (a,), grad_fn)


# =============================================================================
# Backward pass
# =============================================================================

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Accumulate d loss / d x into `x.grad` for every tracked ancestor x.

    Repeated calls without zeroing add up, like any accumulating autograd.
    """
    if loss.data.size != 1:
        raise DimensionError("backward (loss must be scalar)", loss.shape)
    if not loss.requires_grad:
        return

    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# =============================================================================
# Untracked helpers
# =============================================================================

def cosine_similarity(a: TensorLike, b: TensorLike) -> float:
    """dot(a, b) / (|a| |b|) for two 1-D vectors, clamped to [-1, 1]."""
    a_arr = np.ravel(as_tensor(a).data)
    b_arr = np.ravel(as_tensor(b).data)
    if a_arr.shape != b_arr.shape:
        raise DimensionError("cosine_similarity", a_arr.shape, b_arr.shape)
    na, nb = np.linalg.norm(a_arr), np.linalg.norm(b_arr)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError()
    return float(np.clip(np.dot(a_arr, b_arr) / (na * nb), -1.0, 1.0))
