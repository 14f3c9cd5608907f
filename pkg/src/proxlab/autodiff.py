"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Just enough machinery to express a small autoregressive policy and the
clipped surrogate losses built on top of it: elementwise arithmetic,
matmul, log_softmax/gather, minimum/clip/where, and detach. Graphs are
built per evaluation (define-by-run) and freed with the Python objects;
there is no graph caching and no broadcasting beyond scalar-vs-array.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Value",
    "ShapeError",
    "DomainError",
    "concat",
    "clip",
    "grad_check",
    "minimum",
    "where",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, shape_a, shape_b):
        super().__init__(f"{op}: operand shapes {tuple(shape_a)} and {tuple(shape_b)} do not conform")
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. log of a non-positive)."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _check_elementwise(op: str, a: np.ndarray, b: np.ndarray) -> None:
    # Equal shapes, or one side is a 0-d scalar. No general broadcasting.
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(op, a.shape, b.shape)


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo scalar broadcast: a scalar operand collects the full sum.
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


class Value:
    """A node in the computation graph: float64 data plus an optional gradient.

    ``requires_grad`` marks trainable leaves; it propagates through ops.
    ``detached`` marks values created by :meth:`detach`, which share their
    source's bits but block all gradient flow.
    """

    __slots__ = ("data", "grad", "requires_grad", "detached", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.detached = False
        self._parents: tuple[Value, ...] = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Value(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _lift(x) -> "Value":
        return x if isinstance(x, Value) else Value(x)

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward, op: str) -> "Value":
        out = Value(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        out._op = op
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = Value._lift(other)
        _check_elementwise("add", self.data, other.data)
        out_data = self.data + other.data

        def backward(g):
            self._accum(_reduce_to(g, self.data.shape))
            other._accum(_reduce_to(g, other.data.shape))

        return Value._make(out_data, (self, other), backward, "add")

    def __sub__(self, other):
        other = Value._lift(other)
        _check_elementwise("sub", self.data, other.data)
        out_data = self.data - other.data

        def backward(g):
            self._accum(_reduce_to(g, self.data.shape))
            other._accum(_reduce_to(-g, other.data.shape))

        return Value._make(out_data, (self, other), backward, "sub")

    def __mul__(self, other):
        other = Value._lift(other)
        _check_elementwise("mul", self.data, other.data)
        out_data = self.data * other.data

        def backward(g):
            self._accum(_reduce_to(g * other.data, self.data.shape))
            other._accum(_reduce_to(g * self.data, other.data.shape))

        return Value._make(out_data, (self, other), backward, "mul")

    def __truediv__(self, other):
        other = Value._lift(other)
        _check_elementwise("div", self.data, other.data)
        out_data = self.data / other.data

        def backward(g):
            self._accum(_reduce_to(g / other.data, self.data.shape))
            other._accum(_reduce_to(-g * self.data / (other.data * other.data), other.data.shape))

        return Value._make(out_data, (self, other), backward, "div")

    def __neg__(self):
        def backward(g):
            self._accum(-g)

        return Value._make(-self.data, (self,), backward, "neg")

    def __radd__(self, other):
        return Value._lift(other) + self

    def __rsub__(self, other):
        return Value._lift(other) - self

    def __rmul__(self, other):
        return Value._lift(other) * self

    def __rtruediv__(self, other):
        return Value._lift(other) / self

    def __matmul__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        out_data = a @ b

        def backward(g):
            self._accum(g @ b.T)
            other._accum(a.T @ g)

        return Value._make(out_data, (self, other), backward, "matmul")

    # -- transcendental -----------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accum(g * out_data)

        return Value._make(out_data, (self,), backward, "exp")

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log: input has non-positive entries")
        out_data = np.log(self.data)

        def backward(g):
            self._accum(g / self.data)

        return Value._make(out_data, (self,), backward, "log")

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accum(g * (1.0 - out_data * out_data))

        return Value._make(out_data, (self,), backward, "tanh")

    # -- reductions and indexing ---------------------------------------------

    def sum(self):
        out_data = np.sum(self.data)

        def backward(g):
            self._accum(np.full_like(self.data, float(g)))

        return Value._make(out_data, (self,), backward, "sum")

    def mean(self):
        n = self.data.size
        out_data = np.sum(self.data) / n

        def backward(g):
            self._accum(np.full_like(self.data, float(g) / n))

        return Value._make(out_data, (self,), backward, "mean")

    def gather(self, index):
        """Select one entry along the last axis per leading position."""
        idx = np.asarray(index, dtype=np.int64)
        if self.data.ndim < 1:
            raise ShapeError("gather", self.data.shape, idx.shape)
        if idx.shape != self.data.shape[:-1]:
            raise ShapeError("gather", self.data.shape, idx.shape)
        if idx.size and (idx.min() < 0 or idx.max() >= self.data.shape[-1]):
            raise DomainError("gather: index out of range for last axis")
        out_data = np.take_along_axis(self.data, idx[..., None], axis=-1)[..., 0]

        def backward(g):
            full = np.zeros_like(self.data)
            np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
            self._accum(full)

        return Value._make(out_data, (self,), backward, "gather")

    def log_softmax(self):
        """log_softmax along the last axis, max-shifted for stability."""
        z = self.data
        m = np.max(z, axis=-1, keepdims=True)
        shifted = z - m
        lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        out_data = shifted - lse
        softmax = np.exp(out_data)

        def backward(g):
            self._accum(g - softmax * np.sum(g, axis=-1, keepdims=True))

        return Value._make(out_data, (self,), backward, "log_softmax")

    def detach(self) -> "Value":
        """Same bits, no gradient path."""
        out = Value(self.data)
        out.detached = True
        out._op = "detach"
        return out

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every reachable node with requires_grad.

        The root must hold exactly one element. Each node's local rule runs
        once, in reverse topological order.
        """
        if self.data.size != 1:
            raise ValueError(f"backward: root must be scalar, got shape {self.data.shape}")

        topo: list[Value] = []
        visited: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def minimum(a: Value, b: Value) -> Value:
    """Elementwise minimum; on ties the gradient flows to the first argument."""
    a = Value._lift(a)
    b = Value._lift(b)
    _check_elementwise("minimum", a.data, b.data)
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward(g):
        a._accum(_reduce_to(g * take_a, a.data.shape))
        b._accum(_reduce_to(g * ~take_a, b.data.shape))

    return Value._make(out_data, (a, b), backward, "minimum")


def clip(x: Value, lo: float, hi: float) -> Value:
    """Clamp to [lo, hi]; derivative is 1 strictly inside, 0 at and beyond the bounds."""
    if not lo <= hi:
        raise DomainError(f"clip: lo={lo} exceeds hi={hi}")
    x = Value._lift(x)
    out_data = np.clip(x.data, lo, hi)
    interior = (x.data > lo) & (x.data < hi)

    def backward(g):
        x._accum(g * interior)

    return Value._make(out_data, (x,), backward, "clip")


def where(mask, a: Value, b: Value) -> Value:
    """Select a where mask is true, b elsewhere. mask is a constant boolean array."""
    a = Value._lift(a)
    b = Value._lift(b)
    mask = np.asarray(mask, dtype=bool)
    _check_elementwise("where", a.data, b.data)
    if mask.shape != a.data.shape and mask.shape != b.data.shape:
        raise ShapeError("where", mask.shape, a.data.shape)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        a._accum(_reduce_to(g * mask, a.data.shape))
        b._accum(_reduce_to(g * ~mask, b.data.shape))

    return Value._make(out_data, (a, b), backward, "where")


def concat(values: list) -> Value:
    """Concatenate 1-d values into one vector."""
    vals = [Value._lift(v) for v in values]
    for v in vals:
        if v.data.ndim != 1:
            raise ShapeError("concat", v.data.shape, (-1,))
    out_data = np.concatenate([v.data for v in vals]) if vals else np.zeros(0)
    offsets = np.cumsum([0] + [v.data.size for v in vals])

    def backward(g):
        for v, start, stop in zip(vals, offsets[:-1], offsets[1:]):
            v._accum(g[start:stop])

    return Value._make(out_data, tuple(vals), backward, "concat")


def grad_check(f, x: Value, h: float = 1e-6) -> float:
    """Compare f's reverse-mode gradient at x against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    f must map a Value to a scalar Value and be evaluable at x +- h per
    coordinate; non-finite outputs raise.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    leaf = Value(np.array(x.data, copy=True), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    if not np.isfinite(out.data):
        raise ValueError("grad_check: f returned a non-finite value")
    out.backward()
    analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)

    numeric = np.zeros_like(analytic)
    base = np.array(x.data, copy=True)
    flat_numeric = numeric.reshape(-1)
    for i in range(base.size):
        for sign in (+1.0, -1.0):
            probe = base.copy()
            probe.reshape(-1)[i] += sign * h
            val = f(Value(probe)).data
            if not np.isfinite(val):
                raise ValueError("grad_check: f returned a non-finite value at a probe point")
            flat_numeric[i] += sign * float(val)
        flat_numeric[i] /= 2.0 * h

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
