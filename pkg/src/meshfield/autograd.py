"""Reverse-mode automatic differentiation on dense float64 tensors.

A ``Tensor`` wraps a row-major numpy float64 array. Every operation that
receives at least one ``requires_grad`` input records the inputs and a
backward rule on its output, forming an implicit tape; ``Tensor.backward``
replays that tape in reverse topological order. Gradients accumulate into
``.grad`` across repeated backward calls (callers reset via ``zero_grad``).

Everything is single-threaded and deterministic: identical inputs produce
bit-identical outputs and gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "cosine_sim",
    "gather_rows",
    "matmul",
    "maximum",
    "minimum",
    "segment_max_data",
    "segment_sum",
]


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcastable(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            return False
    return True


class Tensor:
    """Dense float64 tensor participating in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], tuple[Array | None, ...]] | None = None
        self._op = "leaf"

    # -- construction -----------------------------------------------------

    @staticmethod
    def _result(data: Array, parents: Sequence["Tensor"], op: str,
                backward: Callable[[Array], tuple[Array | None, ...]]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic --------------------------------------------------------

    def _binary(self, other, fwd, bwd, op: str) -> "Tensor":
        other = as_tensor(other)
        if not _broadcastable(self.shape, other.shape):
            raise DimensionError(f"{op}: shapes {self.shape} and {other.shape} do not broadcast")
        return Tensor._result(fwd(self.data, other.data), (self, other), op,
                              lambda g: bwd(g, self, other))

    def __add__(self, other) -> "Tensor":
        return self._binary(other, np.add,
                            lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
                            "add")

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return self._binary(other, np.subtract,
                            lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
                            "sub")

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        return self._binary(other, np.multiply,
                            lambda g, a, b: (_unbroadcast(g * b.data, a.shape),
                                             _unbroadcast(g * a.data, b.shape)),
                            "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return self._binary(other, np.divide,
                            lambda g, a, b: (_unbroadcast(g / b.data, a.shape),
                                             _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
                            "div")

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), "neg", lambda g: (-g,))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def pow(self, exponent: float) -> "Tensor":
        e = float(exponent)
        return Tensor._result(self.data ** e, (self,), "pow",
                              lambda g: (g * e * self.data ** (e - 1.0),))

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)
        return Tensor._result(out_data, (self,), "sqrt",
                              lambda g: (g * 0.5 / out_data,))

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        return Tensor._result(out_data, (self,), "exp", lambda g: (g * out_data,))

    def log(self) -> "Tensor":
        return Tensor._result(np.log(self.data), (self,), "log",
                              lambda g: (g / self.data,))

    # -- activations -------------------------------------------------------

    def relu(self) -> "Tensor":
        return Tensor._result(np.maximum(self.data, 0.0), (self,), "relu",
                              lambda g: (g * (self.data > 0.0),))

    def sigmoid(self) -> "Tensor":
        # exp(-|x|) form is stable for large |x|; the clip keeps the output
        # strictly inside (0, 1) even where float64 would round to the ends
        out_data = np.where(self.data >= 0,
                            1.0 / (1.0 + np.exp(-np.abs(self.data))),
                            np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))))
        out_data = np.clip(out_data, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        return Tensor._result(out_data, (self,), "sigmoid",
                              lambda g: (g * out_data * (1.0 - out_data),))

    def tanh(self) -> "Tensor":
        one_minus = np.nextafter(1.0, 0.0)
        out_data = np.clip(np.tanh(self.data), -one_minus, one_minus)
        return Tensor._result(out_data, (self,), "tanh",
                              lambda g: (g * (1.0 - out_data * out_data),))

    def sin(self) -> "Tensor":
        return Tensor._result(np.sin(self.data), (self,), "sin",
                              lambda g: (g * np.cos(self.data),))

    def cos(self) -> "Tensor":
        return Tensor._result(np.cos(self.data), (self,), "cos",
                              lambda g: (-g * np.sin(self.data),))

    def softplus(self) -> "Tensor":
        out_data = np.logaddexp(0.0, self.data)
        def bwd(g):
            s = np.where(self.data >= 0,
                         1.0 / (1.0 + np.exp(-np.abs(self.data))),
                         np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))))
            return (g * s,)
        return Tensor._result(out_data, (self,), "softplus", bwd)

    # -- reductions ----------------------------------------------------------

    def mean(self, axis: int) -> "Tensor":
        """Arithmetic mean along ``axis``; the axis is kept with size 1."""
        if not -self.ndim <= axis < self.ndim:
            raise DimensionError(f"mean: axis {axis} out of range for shape {self.shape}")
        axis = axis % self.ndim
        n = self.shape[axis]
        out_data = np.mean(self.data, axis=axis, keepdims=True)
        shape = self.shape
        return Tensor._result(out_data, (self,), "mean",
                              lambda g: (np.broadcast_to(g, shape) / n,))

    def sum(self, axis: int | None = None, keepdims: bool = True) -> "Tensor":
        if axis is None:
            out_data = np.asarray(np.sum(self.data))
            shape = self.shape
            return Tensor._result(out_data, (self,), "sum",
                                  lambda g: (np.broadcast_to(g, shape).copy(),))
        if not -self.ndim <= axis < self.ndim:
            raise DimensionError(f"sum: axis {axis} out of range for shape {self.shape}")
        out_data = np.sum(self.data, axis=axis, keepdims=keepdims)
        axis_ = axis % self.ndim

        def bwd(g):
            gg = g if keepdims else np.expand_dims(g, axis_)
            return (np.broadcast_to(gg, self.shape).copy(),)

        return Tensor._result(out_data, (self,), "sum", bwd)

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), "reshape",
                              lambda g: (g.reshape(old),))

    def transpose(self, axes: tuple[int, ...] | None = None) -> "Tensor":
        inv = None if axes is None else tuple(np.argsort(axes))
        return Tensor._result(np.transpose(self.data, axes), (self,), "transpose",
                              lambda g: (np.transpose(g, inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        """Contiguous slice ``[start, start+length)`` along ``axis``."""
        if not -self.ndim <= axis < self.ndim:
            raise DimensionError(f"narrow: axis {axis} out of range for shape {self.shape}")
        axis = axis % self.ndim
        if start < 0 or start + length > self.shape[axis]:
            raise DimensionError(
                f"narrow: [{start}, {start + length}) outside axis of size {self.shape[axis]}")
        index = tuple(slice(None) if d != axis else slice(start, start + length)
                      for d in range(self.ndim))

        def bwd(g):
            gx = np.zeros(self.shape)
            gx[index] = g
            return (gx,)

        return Tensor._result(self.data[index].copy(), (self,), "narrow", bwd)

    def clamp(self, lo: float | None, hi: float | None) -> "Tensor":
        out_data = np.clip(self.data, lo, hi)

        def bwd(g):
            mask = np.ones_like(self.data)
            if lo is not None:
                mask = mask * (self.data > lo)
            if hi is not None:
                mask = mask * (self.data < hi)
            return (g * mask,)

        return Tensor._result(out_data, (self,), "clamp", bwd)

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``.grad`` on every ``requires_grad`` tensor reachable from here.

        Gradients accumulate across calls: run ``zero_grad`` on leaves (or let
        the optimizer do it) between optimization steps.
        """
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        messages: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = messages.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaves keep their gradient; intermediate grads are transient
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = messages.get(id(parent))
                messages[id(parent)] = pg if acc is None else acc + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with the standard transpose backward rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    return Tensor._result(a.data @ b.data, (a, b), "matmul",
                          lambda g: (g @ b.data.T, a.data.T @ g))


def minimum(a: Tensor, b) -> Tensor:
    """Elementwise minimum; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise DimensionError(f"minimum: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        mask = a.data <= b.data
        return (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape))

    return Tensor._result(np.minimum(a.data, b.data), (a, b), "minimum", bwd)


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise maximum; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise DimensionError(f"maximum: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        mask = a.data >= b.data
        return (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape))

    return Tensor._result(np.maximum(a.data, b.data), (a, b), "maximum", bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis),
                          tensors, "concat", bwd)


def _scatter_add_rows(values: Array, index: Array, num_rows: int) -> Array:
    """Deterministic rows-by-index accumulation (bincount per column)."""
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=num_rows)
    out = np.empty((num_rows,) + values.shape[1:])
    flat = values.reshape(len(values), -1)
    cols = [np.bincount(index, weights=flat[:, c], minlength=num_rows)
            for c in range(flat.shape[1])]
    return np.stack(cols, axis=1).reshape(out.shape)


def gather_rows(x: Tensor, index: Array) -> Tensor:
    """``out[i] = x[index[i]]``; backward scatter-adds into the source rows."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise DimensionError(f"gather_rows expects a 1-D index, got shape {index.shape}")
    return Tensor._result(x.data[index], (x,), "gather_rows",
                          lambda g: (_scatter_add_rows(g, index, x.shape[0]),))


def segment_sum(x: Tensor, segment_ids: Array, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``segment_ids``."""
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (x.shape[0],):
        raise DimensionError(
            f"segment_sum: ids shape {segment_ids.shape} does not match rows {x.shape[0]}")
    return Tensor._result(_scatter_add_rows(x.data, segment_ids, num_segments),
                          (x,), "segment_sum", lambda g: (g[segment_ids],))


def segment_max_data(values: Array, segment_ids: Array, num_segments: int) -> Array:
    """Per-segment maxima of raw values (no gradient; used for stable softmax shifts)."""
    out = np.full(num_segments, -np.inf)
    np.maximum.at(out, segment_ids, values)
    return out


def cross2d(u: Tensor, v: Tensor) -> Tensor:
    """Scalar cross product of (N, 2) row vectors -> (N, 1)."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape or u.ndim != 2 or u.shape[1] != 2:
        raise DimensionError(f"cross2d expects matching (N, 2) inputs, got {u.shape}, {v.shape}")
    out_data = (u.data[:, 0] * v.data[:, 1] - u.data[:, 1] * v.data[:, 0])[:, None]

    def bwd(g):
        gu = np.empty(u.shape)
        gu[:, 0] = g[:, 0] * v.data[:, 1]
        gu[:, 1] = -g[:, 0] * v.data[:, 0]
        gv = np.empty(v.shape)
        gv[:, 0] = -g[:, 0] * u.data[:, 1]
        gv[:, 1] = g[:, 0] * u.data[:, 0]
        return (gu, gv)

    return Tensor._result(out_data, (u, v), "cross2d", bwd)


def rowwise_dot(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise dot product of equal-shape 2-D tensors -> (N, 1)."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape or u.ndim != 2:
        raise DimensionError(f"rowwise_dot expects matching 2-D inputs, got {u.shape}, {v.shape}")
    out_data = np.einsum("ij,ij->i", u.data, v.data)[:, None]
    return Tensor._result(out_data, (u, v), "rowwise_dot",
                          lambda g: (g * v.data, g * u.data))


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-D vectors as a differentiable scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_sim expects equal-length vectors, got {a.shape} and {b.shape}")
    if not np.linalg.norm(a.data) > 0.0 or not np.linalg.norm(b.data) > 0.0:
        raise NumericError("cosine_sim is undefined for zero-norm inputs")
    dot = (a * b).sum()
    na = (a * a).sum().sqrt()
    nb = (b * b).sum().sqrt()
    return dot / (na * nb)
