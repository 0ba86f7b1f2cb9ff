"""Dense tensors with reverse-mode automatic differentiation.

Every ``Tensor`` wraps a numpy array. Operations on tensors that require
gradients record a backward rule and their inputs; calling
:meth:`Tensor.backward` on a scalar replays those rules in reverse
topological order and accumulates ``.grad`` on every reachable tensor that
requires gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, NumericError, ShapeError, ValidationError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

LOG_CLAMP_EPS = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float64)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional float array with an optional gradient node.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    gradient survives :meth:`backward`. Intermediate results keep a
    reference to their inputs and a local backward rule until the pass
    that consumes them releases the graph.
    """

    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Return a constant tensor sharing this tensor's values."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=self.data.dtype), self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- graph construction -----------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Tuple["Tensor", ...], backward, op: str) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out._op = op
        return out

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``.

        Only scalar tensors may start a backward pass unless an explicit
        upstream ``grad`` is supplied. The recorded graph is released
        afterwards; intermediate gradients are dropped.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")

        order = tape_order(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._backward is not None:
                node.grad = None
                node._backward = None
                node._parents = ()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a, b = self, other

        def _bw(g):
            a._accumulate(g)
            b._accumulate(g)

        return Tensor._make(a.data + b.data, (a, b), _bw, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accumulate(-g), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-ensure_tensor(other, self.dtype))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return ensure_tensor(other, self.dtype) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a, b = self, other

        def _bw(g):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

        return Tensor._make(a.data * b.data, (a, b), _bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a, b = self, other

        def _bw(g):
            a._accumulate(g / b.data)
            b._accumulate(-g * a.data / (b.data * b.data))

        return Tensor._make(a.data / b.data, (a, b), _bw, "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return ensure_tensor(other, self.dtype) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a, p = self, float(exponent)

        def _bw(g):
            a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._make(a.data**p, (a,), _bw, "pow")

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        a = self
        if isinstance(index, Tensor):
            index = index.data.astype(np.int64)

        basic = isinstance(index, slice) or (
            isinstance(index, tuple) and all(isinstance(i, (slice, int)) for i in index)
        )

        def _bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor._make(a.data[index], (a,), _bw, "getitem")

    # -- reductions and reshaping ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def _bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), _bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)), "reshape")

    @property
    def T(self) -> "Tensor":
        a = self
        return Tensor._make(a.data.T, (a,), lambda g: a._accumulate(g.T), "transpose")

    # -- elementwise nonlinearities -------------------------------------

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def clip(self, lo: float, hi: float) -> "Tensor":
        return clip(self, lo, hi)


def ensure_tensor(x: ArrayLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def tape_order(root: Tensor) -> list:
    """Topologically ordered list of recorded nodes reachable from ``root``.

    Inputs come before the operations that consume them, so replaying the
    list backwards visits each recorded op exactly once after all of its
    consumers.
    """
    order, seen = [], set()
    stack = [(root, False)]
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


# -- functional ops -----------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor._make(a.data @ b.data, (a, b), _bw, "matmul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: x._accumulate(g * mask), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: x._accumulate(g * out), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._make(np.log(x.data), (x,), lambda g: x._accumulate(g / x.data), "log")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor._make(out, (x,), lambda g: x._accumulate(g * out * (1.0 - out)), "sigmoid")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._make(np.clip(x.data, lo, hi), (x,), lambda g: x._accumulate(g * inside), "clip")


def _check_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{op}: non-finite input")


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    logits = ensure_tensor(logits)
    _check_finite(logits, "softmax")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        logits._accumulate(out * (g - dot))

    return Tensor._make(out, (logits,), _bw, "softmax")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accumulate(piece)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


def _as_batch(x: Tensor) -> Tensor:
    return x.reshape(1, -1) if x.ndim == 1 else x


def cross_entropy(target: ArrayLike, pred: Tensor, eps: float = LOG_CLAMP_EPS) -> Tensor:
    """Batch-mean of ``-sum_c target_c * ln(pred_c)``; soft targets allowed.

    Both arguments are probability rows. ``pred`` is clamped to ``[eps, 1]``
    before the log.
    """
    target = _as_batch(ensure_tensor(target, getattr(pred, "dtype", None)))
    pred = _as_batch(ensure_tensor(pred))
    if target.shape != pred.shape:
        raise ShapeError(f"cross_entropy: target {target.shape} vs pred {pred.shape}")
    for name, t in (("target", target), ("pred", pred)):
        _check_finite(t, "cross_entropy")
        sums = t.data.sum(axis=-1)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=1e-5):
            raise ValidationError(f"cross_entropy: {name} rows must sum to 1 (worst {sums.flat[np.argmax(np.abs(sums - 1))]:.6g})")
    per_sample = -(target * log(clip(pred, eps, 1.0))).sum(axis=-1)
    return per_sample.mean()


def mse(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batch-mean of the squared Euclidean distance between rows of ``a`` and ``b``.

    A 1-D input is treated as a single sample.
    """
    a, b = _as_batch(ensure_tensor(a)), _as_batch(ensure_tensor(b))
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a - b
    sq = diff * diff
    return sq.reshape(sq.shape[0], -1).sum(axis=1).mean()


def binary_cross_entropy(prob: Tensor, label: float, eps: float = 1e-7) -> Tensor:
    """Batch-mean of ``-ln p`` (label 1) or ``-ln(1-p)`` (label 0), p clamped to [eps, 1-eps]."""
    p = clip(ensure_tensor(prob), eps, 1.0 - eps)
    if label == 1:
        return -log(p).mean()
    if label == 0:
        return -log(1.0 - p).mean()
    raise ValidationError(f"binary label must be 0 or 1, got {label!r}")


def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
