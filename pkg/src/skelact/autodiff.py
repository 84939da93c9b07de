"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

The engine is a plain tape: every operation builds a `Tensor` node that
remembers its parents and a closure producing the parent gradients.  It
covers exactly the operations the rest of the package composes (dense
linear algebra, elementwise nonlinearities, pooling reductions, a
channelwise graph-mix contraction, and a Matern Gram matrix with a
hand-derived backward).  Everything runs in double precision so gradients
can be validated against central finite differences at tight tolerances.

Operations accept either `Tensor` nodes or plain array-likes.  Plain
inputs are lifted to constant leaves, so the same code path serves both
the differentiable model and the array-in/array-out public functions.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "lift",
    "parameter",
    "val",
    "is_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "relu",
    "matmul",
    "reshape",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "log_softmax",
    "channel_mix",
    "matern_gram",
]


class Tensor:
    """A node in the computation tape.

    `value` is always a float64 ndarray.  `grad` is populated by
    `backward()` for every node with `requires_grad`.  Leaves created via
    `lift` are constants; leaves created via `parameter` receive
    gradients.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def detach(self) -> "Tensor":
        """A constant leaf with the same value; blocks gradient flow."""
        return Tensor(self.value)

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Reverse pass from a scalar node; accumulates into `.grad`."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar node")
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # Operator sugar ----------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{flag})"


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def lift(x) -> Tensor:
    """Wrap an array-like as a constant leaf; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(x) -> Tensor:
    """A leaf that accumulates gradients."""
    return Tensor(x, requires_grad=True)


def val(x) -> np.ndarray:
    """The underlying float64 ndarray of a tensor or array-like."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _node(value, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# Elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def neg(a) -> Tensor:
    a = lift(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = lift(a)
    exponent = float(exponent)
    return _node(
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1.0),),
    )


def exp(a) -> Tensor:
    a = lift(a)
    out_value = np.exp(a.value)
    return _node(out_value, (a,), lambda g: (g * out_value,))


def log(a) -> Tensor:
    a = lift(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def relu(a) -> Tensor:
    a = lift(a)
    mask = a.value > 0.0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


# Shape and structure ---------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands; reshape first")
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def reshape(a, shape) -> Tensor:
    a = lift(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis: int = -1) -> Tensor:
    parts = [lift(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


# Reductions ------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    shape = a.value.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_max(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    a = lift(a)
    idx = a.value.argmax(axis=axis)
    out_value = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.value)
        np.put_along_axis(grad, np.expand_dims(idx, axis), g, axis=axis)
        return (grad,)

    return _node(out_value if keepdims else np.squeeze(out_value, axis), (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax along `axis`."""
    a = lift(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    out_value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out_value)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out_value, (a,), backward)


# Domain contractions ---------------------------------------------------


def channel_mix(s, y) -> Tensor:
    """Per-channel spatial aggregation: out[b,t,i,c] = sum_j s[b,i,j,c] y[b,t,j,c].

    `s` holds one (possibly sample-specific) propagation matrix per output
    channel, `y` the transformed features.  This is the single contraction
    every graph-convolution variant in the package routes through, so
    "refinement disabled" and plain propagation stay bit-identical.
    """
    s, y = lift(s), lift(y)
    if s.ndim != 4 or y.ndim != 4:
        raise ValueError("channel_mix expects (B,N,N,C) and (B,T,N,C) operands")
    out_value = np.einsum("bijc,btjc->btic", s.value, y.value)

    def backward(g):
        gs = np.einsum("btic,btjc->bijc", g, y.value) if s.requires_grad else None
        gy = np.einsum("bijc,btic->btjc", s.value, g) if y.requires_grad else None
        return (gs, gy)

    return _node(out_value, (s, y), backward)


def _matern_values(sq_dists: np.ndarray, order: float, amplitude: float, length_scale: float):
    """Kernel values and d(kernel)/d(squared distance) for closed-form orders.

    The derivative is taken with respect to the squared distance because
    that form stays finite at coincident points for orders 3/2 and 5/2
    (the kernel is smooth there even though the distance itself is not
    differentiable at zero).
    """
    r = np.sqrt(sq_dists)
    if order == 0.5:
        k = amplitude * np.exp(-r / length_scale)
        # d k / d s = -k / (2 l r); singular at r=0 where k is constant
        # anyway, so the derivative is forced to zero there.
        with np.errstate(divide="ignore", invalid="ignore"):
            dk_ds = np.where(r > 0.0, -k / (2.0 * length_scale * r), 0.0)
    elif order == 1.5:
        scaled = np.sqrt(3.0) * r / length_scale
        decay = np.exp(-scaled)
        k = amplitude * (1.0 + scaled) * decay
        dk_ds = -amplitude * 1.5 / (length_scale**2) * decay
    elif order == 2.5:
        scaled = np.sqrt(5.0) * r / length_scale
        decay = np.exp(-scaled)
        k = amplitude * (1.0 + scaled + 5.0 * sq_dists / (3.0 * length_scale**2)) * decay
        dk_ds = -amplitude * 5.0 / (6.0 * length_scale**2) * (1.0 + scaled) * decay
    else:
        raise ValueError(f"unsupported Matern order {order!r}; use 1/2, 3/2 or 5/2")
    return k, dk_ds


def matern_gram(z, order: float, amplitude: float, length_scale: float) -> Tensor:
    """Pairwise Matern Gram matrix of the rows of `z` (n, d) -> (n, n)."""
    z = lift(z)
    if z.ndim != 2:
        raise ValueError("matern_gram expects a 2-D (samples, features) input")
    diffs = z.value[:, None, :] - z.value[None, :, :]
    sq_dists = np.einsum("uwd,uwd->uw", diffs, diffs)
    k, dk_ds = _matern_values(sq_dists, order, amplitude, length_scale)

    def backward(g):
        # dL/ds_uw = g_uw * dk_ds_uw; chain through s_uw = ||z_u - z_w||^2.
        # Summing the stored pairwise differences keeps the gradient exactly
        # zero for coincident samples.
        q = g * dk_ds
        q = q + q.T
        gz = 2.0 * np.einsum("uw,uwd->ud", q, diffs)
        return (gz,)

    return _node(k, (z,), backward)
