"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its inputs on an implicit tape (the DAG of Tensor
nodes); ``Tensor.backward`` replays the tape in reverse topological order,
accumulating gradients exactly once per edge.  Only the operations the rest
of the system needs are provided, each with an analytic backward pass that
is validated against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "matmul",
    "softmax_rows",
    "logsumexp",
    "sigmoid",
    "softplus",
    "stop_gradient",
    "relu",
    "square",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "tanh",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "broadcast_to",
    "concat",
    "transpose",
    "reshape",
]


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class NumericError(ValueError):
    """Raised when an operation receives or would produce invalid numerics."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation.

    Tensors are immutable after creation except for gradient accumulation
    into ``grad``.  ``requires_grad`` marks leaves that should receive
    gradients; derived tensors require grad iff any parent does.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction ----------------------------------------------------

    @staticmethod
    def from_op(data, parents, backward) -> "Tensor":
        """Create a tensor produced by an operation.

        ``backward(grad_out)`` must accumulate into the parents via
        ``accumulate_grad``.  The node is recorded only if some parent
        requires grad, so inference-mode graphs carry no tape overhead.
        """
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    # -- basic introspection ----------------------------------------------

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

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ----------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor through the recorded tape."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() without explicit gradient requires a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.shape:
                raise ShapeError(
                    f"gradient shape {grad.shape} does not match tensor shape {self.shape}"
                )

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        accumulate_grad(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    # method aliases used throughout the model code
    def matmul(self, other):
        return matmul(self, other)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis=axis, keepdims=keepdims)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, allocating the buffer on first touch."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    for _ in range(extra):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b, forward, backward_a, backward_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = forward(a.data, b.data)
    except ValueError as err:
        raise ShapeError(
            f"incompatible shapes {a.shape} and {b.shape}: {err}"
        ) from None

    def _bk(grad):
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(backward_a(grad, a.data, b.data), a.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(backward_b(grad, a.data, b.data), b.shape))

    return Tensor.from_op(data, (a, b), _bk)


# -- elementwise arithmetic (trailing-dimension broadcasting) ----------------


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b, np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def _unary(x, data, grad_fn) -> Tensor:
    x = as_tensor(x)

    def _bk(grad):
        accumulate_grad(x, grad_fn(grad))

    return Tensor.from_op(data, (x,), _bk)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.maximum(x.data, 0.0), lambda g: g * (x.data > 0.0))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.square(x.data), lambda g: g * 2.0 * x.data)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    return _unary(x, out_data, lambda g: g * out_data)


def log(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.log(x.data), lambda g: g / x.data)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.sqrt(x.data)
    return _unary(x, out_data, lambda g: g * 0.5 / out_data)


def sin(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.sin(x.data), lambda g: g * np.cos(x.data))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.cos(x.data), lambda g: -g * np.sin(x.data))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)
    return _unary(x, out_data, lambda g: g * (1.0 - out_data * out_data))


def sigmoid(x) -> Tensor:
    """Elementwise logistic function, evaluated through the overflow-free branch."""
    x = as_tensor(x)
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    return _unary(x, out_data, lambda g: g * out_data * (1.0 - out_data))


def softplus(x) -> Tensor:
    """log(1 + e^x) with the stabilized large-argument branch."""
    x = as_tensor(x)
    out_data = np.logaddexp(0.0, x.data)
    d = x.data

    def _grad(g):
        s = np.empty_like(d)
        pos = d >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ex = np.exp(d[~pos])
        s[~pos] = ex / (1.0 + ex)
        return g * s

    return _unary(x, out_data, _grad)


def stop_gradient(x) -> Tensor:
    """Forward identity that contributes zero gradient to its input."""
    x = as_tensor(x)
    return Tensor(x.data)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Strict 2-D matrix product; no implicit broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def _bk(grad):
        if a.requires_grad:
            accumulate_grad(a, grad @ b.data.T)
        if b.requires_grad:
            accumulate_grad(b, a.data.T @ grad)

    return Tensor.from_op(data, (a, b), _bk)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    data = np.transpose(x.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return _unary(x, data, lambda g: np.transpose(g, inverse))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        data = np.reshape(x.data, shape)
    except ValueError as err:
        raise ShapeError(str(err)) from None
    return _unary(x, data, lambda g: np.reshape(g, orig))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _unary(x, data, lambda g: _unbroadcast(g, x.shape))


def take(x, idx) -> Tensor:
    """Basic and advanced indexing; gradient scatters back into place."""
    x = as_tensor(x)
    data = x.data[idx]

    def _grad(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return full

    return _unary(x, data, _grad)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bk(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * grad.ndim
                sl[axis] = slice(lo, hi)
                accumulate_grad(t, grad[tuple(sl)])

    return Tensor.from_op(data, tuple(tensors), _bk)


# -- reductions ----------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, x.shape).copy()

    return _unary(x, data, _grad)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = np.mean(x.data, axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.shape[a] for a in axis]))
    else:
        count = x.shape[axis]

    def _grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, x.shape).copy() / count

    return _unary(x, data, _grad)


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the subgradient to the lowest index only."""
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("reduce_max of an empty tensor")
    data = np.max(x.data, axis=axis, keepdims=keepdims)

    if axis is None:
        flat_idx = int(np.argmax(x.data))

        def _grad(g):
            full = np.zeros_like(x.data)
            full.reshape(-1)[flat_idx] = np.sum(g)
            return full

    else:
        arg = np.argmax(x.data, axis=axis)

        def _grad(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(x.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), g, axis=axis)
            return full

    return _unary(x, data, _grad)


# -- stabilized softmax / logsumexp -------------------------------------------


def softmax_rows(x) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows requires a 2-D tensor, got shape {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError("softmax_rows requires at least one column")
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=1, keepdims=True)

    def _grad(g):
        inner = np.sum(g * out_data, axis=1, keepdims=True)
        return out_data * (g - inner)

    return _unary(x, out_data, _grad)


def logsumexp(x, axis: int = -1) -> Tensor:
    """Stabilized log of summed exponentials along the last axis."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[axis] < 1:
        raise ShapeError(f"logsumexp requires a nonempty reduction axis, got shape {x.shape}")
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def _grad(g):
        return np.expand_dims(g, axis) * soft

    return _unary(x, out_data, _grad)
