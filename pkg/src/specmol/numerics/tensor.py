"""Float64 tensors on a dynamic reverse-mode tape.

Every operation that produces a Tensor records its parents and a closure
mapping the output gradient to parent-gradient contributions; ``backward``
walks the tape in reverse topological order and accumulates into ``grad``.
Everything is 64-bit and single threaded, and identical inputs produce
bit-identical outputs.

Broadcasting is supported only to the extent the encoders need it
(biases, scalars, mask columns); sparse tensors and mixed precision are
out of scope.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonScalarLossError(ValueError):
    """backward() was called on a non-scalar tensor."""


class NonFiniteInputError(ValueError):
    """An operation that requires finite inputs received NaN or infinity."""


class AllMaskedError(ValueError):
    """An attention row has no unmasked key to attend to."""


_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (forward-only evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """A dense float64 array plus optional gradient state."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _ensure_tensor(other))

    def __radd__(self, other):
        return add(_ensure_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _ensure_tensor(other))

    def __rsub__(self, other):
        return sub(_ensure_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _ensure_tensor(other))

    def __rmul__(self, other):
        return mul(_ensure_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _ensure_tensor(other))


def _ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, contribution: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = contribution if t.grad is None else t.grad + contribution


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar loss into every reachable
    tensor with requires_grad. Unreached parameters keep their current
    (zero or None) gradient."""
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict two-dimensional matrix product [m x k] @ [k x n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(data, (a, b), backward_fn)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes with equal leading axes."""
    if a.ndim != b.ndim or a.ndim < 3:
        raise ShapeMismatchError(f"batched_matmul needs matching >=3-D operands, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"incompatible batched shapes: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _node(data, (a, b), backward_fn)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), backward_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    original = a.shape

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(original))

    return _node(a.data.reshape(shape), (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(tensors)
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in parts], axis=axis)

    def backward_fn(g: np.ndarray) -> None:
        for t, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _node(data, parts, backward_fn)


def select_index(a: Tensor, index: int, axis: int) -> Tensor:
    """Slice out one position along ``axis`` (dimension is dropped)."""
    data = np.take(a.data, index, axis=axis)

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        slicer = [slice(None)] * a.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        _accumulate(a, full)

    return _node(data, (a,), backward_fn)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids] for integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward_fn(g: np.ndarray) -> None:
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        _accumulate(table, acc)

    return _node(data, (table,), backward_fn)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            g_expanded = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_expanded, a.shape).copy())

    return _node(data, (a,), backward_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward_fn(g: np.ndarray) -> None:
        sech2 = 1.0 - t**2
        local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        _accumulate(a, g * local)

    return _node(data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * keep)

    return _node(np.where(keep, a.data, 0.0), (a,), backward_fn)


# ---------------------------------------------------------------------------
# Normalization and softmax
# ---------------------------------------------------------------------------


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_node(a: Tensor) -> Tensor:
    y = _softmax_last(a.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, (g - (g * y).sum(axis=-1, keepdims=True)) * y)

    return _node(y, (a,), backward_fn)


def softmax_rows(a: Tensor) -> Tensor:
    """Numerically stable per-row softmax of a 2-D tensor."""
    if a.ndim != 2:
        raise ShapeMismatchError(f"softmax_rows needs a 2-D tensor, got {a.shape}")
    if not np.isfinite(a.data).all():
        raise NonFiniteInputError("softmax_rows received non-finite values")
    return _softmax_node(a)


def masked_softmax_last(a: Tensor, key_mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with masked positions forced to zero
    weight. ``key_mask`` broadcasts against ``a`` and marks real keys."""
    if not bool(np.broadcast_to(key_mask, a.shape).any(axis=-1).all()):
        raise AllMaskedError("softmax row with every position masked")
    neg_inf = np.where(key_mask, 0.0, -np.inf)
    shifted = a.data + neg_inf
    return _softmax_node(_node(shifted, (a,), lambda g: _accumulate(a, g)))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance,
    then apply the elementwise affine transform gain * x + bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm affine parameters must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    x_hat = centered / std
    data = x_hat * gain.data + bias.data

    def backward_fn(g: np.ndarray) -> None:
        lead_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * x_hat).sum(axis=lead_axes))
        _accumulate(bias, g.sum(axis=lead_axes))
        d_xhat = g * gain.data
        _accumulate(
            a,
            (
                d_xhat
                - d_xhat.mean(axis=-1, keepdims=True)
                - x_hat * (d_xhat * x_hat).mean(axis=-1, keepdims=True)
            )
            / std,
        )

    return _node(data, (a, gain, bias), backward_fn)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    norm = np.sqrt((a.data**2).sum(axis=-1, keepdims=True))
    if not (norm > 0).all():
        raise ValueError("cannot l2-normalize a zero vector")
    y = a.data / norm

    def backward_fn(g: np.ndarray) -> None:
        dot = (a.data * g).sum(axis=-1, keepdims=True)
        _accumulate(a, g / norm - a.data * (dot / norm**3))

    return _node(y, (a,), backward_fn)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Stable log-sum-exp of each row of a 2-D tensor."""
    if a.ndim != 2:
        raise ShapeMismatchError(f"logsumexp_rows needs a 2-D tensor, got {a.shape}")
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=-1, keepdims=True)
    data = (m + np.log(s)).reshape(a.shape[0])

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g[:, None] * (e / s))

    return _node(data, (a,), backward_fn)


def take_diag(a: Tensor) -> Tensor:
    """Main diagonal of a square 2-D tensor."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"take_diag needs a square matrix, got {a.shape}")
    n = a.shape[0]
    idx = np.arange(n)

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[idx, idx] = g
        _accumulate(a, full)

    return _node(a.data[idx, idx].copy(), (a,), backward_fn)
