"""Reverse-mode automatic differentiation over a fixed primitive set.

The engine records a computation graph of float64 numpy arrays. Primitives are
the module-level constructors below (affine, tanh, exp, log, softmax, erf,
sum, prod, minimum, square, ...) plus the arithmetic operators on Var; there
is no API for attaching arbitrary closures, which keeps every differentiable
path finite-difference certifiable. Nodes whose ancestry contains no gradient
leaf collapse to constants, so stop-gradient subgraphs cost nothing on the
backward pass.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import special as _special

_FLOAT = np.float64
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


class AutodiffError(Exception):
    pass


class UnsupportedPrimitiveError(AutodiffError):
    pass


_KNOWN_OPS = {
    "leaf", "const",
    "add", "sub", "mul", "div", "neg",
    "affine",
    "tanh", "atanh", "exp", "log", "log1p", "square", "softplus", "relu",
    "erf", "clip", "sin", "cos",
    "sum", "mean", "prod", "minimum",
    "logsumexp", "softmax",
    "reshape", "concat", "narrow", "select_component",
    "stopgrad",
}


class Var:
    """One graph node: a float64 array plus how to push gradients to parents."""

    __slots__ = ("value", "op", "parents", "vjp", "requires_grad")

    def __init__(self, value, op, parents=(), vjp=None, requires_grad=True):
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

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

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"


def _asarray(x):
    return np.asarray(x, dtype=_FLOAT)


def leaf(value) -> Var:
    return Var(_asarray(value), "leaf")


def constant(value) -> Var:
    return Var(_asarray(value), "const", requires_grad=False)


def wrap(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _node(value, op, parents, vjp) -> Var:
    if not any(p.requires_grad for p in parents):
        return Var(value, "const", requires_grad=False)
    return Var(value, op, parents, vjp)


def _unbroadcast(grad, shape):
    # Reduce a broadcasted gradient back to the parent's shape.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = wrap(a), wrap(b)
    v = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _node(v, "add", (a, b), vjp)


def sub(a, b) -> Var:
    a, b = wrap(a), wrap(b)
    v = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return _node(v, "sub", (a, b), vjp)


def mul(a, b) -> Var:
    a, b = wrap(a), wrap(b)
    v = a.value * b.value

    def vjp(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return _node(v, "mul", (a, b), vjp)


def div(a, b) -> Var:
    a, b = wrap(a), wrap(b)
    v = a.value / b.value

    def vjp(g):
        return (_unbroadcast(g / b.value, a.value.shape),
                _unbroadcast(-g * v / b.value, b.value.shape))

    return _node(v, "div", (a, b), vjp)


def neg(a) -> Var:
    a = wrap(a)
    return _node(-a.value, "neg", (a,), lambda g: (-g,))


def affine(x, weight, bias) -> Var:
    """x @ weight.T + bias with weight (out, in) and x (..., in)."""
    x, weight, bias = wrap(x), wrap(weight), wrap(bias)
    v = x.value @ weight.value.T + bias.value

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gx = g @ weight.value
        gw = np.tensordot(g, x.value, axes=(lead, lead))
        gb = g.sum(axis=lead)
        return gx, gw, gb

    return _node(v, "affine", (x, weight, bias), vjp)


def tanh(a) -> Var:
    a = wrap(a)
    v = np.tanh(a.value)
    return _node(v, "tanh", (a,), lambda g: (g * (1.0 - v * v),))


def atanh(a) -> Var:
    a = wrap(a)
    v = np.arctanh(a.value)
    return _node(v, "atanh", (a,), lambda g: (g / (1.0 - a.value * a.value),))


def exp(a) -> Var:
    a = wrap(a)
    v = np.exp(a.value)
    return _node(v, "exp", (a,), lambda g: (g * v,))


def log(a) -> Var:
    a = wrap(a)
    v = np.log(a.value)
    return _node(v, "log", (a,), lambda g: (g / a.value,))


def log1p(a) -> Var:
    a = wrap(a)
    v = np.log1p(a.value)
    return _node(v, "log1p", (a,), lambda g: (g / (1.0 + a.value),))


def square(a) -> Var:
    a = wrap(a)
    return _node(a.value * a.value, "square", (a,), lambda g: (2.0 * g * a.value,))


def softplus(a) -> Var:
    a = wrap(a)
    v = np.logaddexp(0.0, a.value)
    return _node(v, "softplus", (a,), lambda g: (g * _special.expit(a.value),))


def relu(a) -> Var:
    a = wrap(a)
    v = np.maximum(a.value, 0.0)
    return _node(v, "relu", (a,), lambda g: (g * (a.value > 0.0),))


def erf(a) -> Var:
    a = wrap(a)
    v = _special.erf(a.value)

    def vjp(g):
        return (g * 2.0 * _INV_SQRT_PI * np.exp(-a.value * a.value),)

    return _node(v, "erf", (a,), vjp)


def sin(a) -> Var:
    a = wrap(a)
    return _node(np.sin(a.value), "sin", (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Var:
    a = wrap(a)
    return _node(np.cos(a.value), "cos", (a,), lambda g: (-g * np.sin(a.value),))


def clip(a, lo: float, hi: float) -> Var:
    """Hard clip; pass-through subgradient on [lo, hi], zero outside."""
    a = wrap(a)
    v = np.clip(a.value, lo, hi)
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(v, "clip", (a,), lambda g: (g * mask,))


def reduce_sum(a, axis=None, keepdims=False) -> Var:
    a = wrap(a)
    v = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(v, "sum", (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False) -> Var:
    a = wrap(a)
    v = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.value.shape).copy(),)

    return _node(v, "mean", (a,), vjp)


def reduce_prod(a, axis=None) -> Var:
    """Product reduction; gradient is exact even with zero entries."""
    a = wrap(a)
    x = a.value
    if axis is None:
        flat = x.reshape(-1)
        v = flat.prod()

        def vjp(g):
            left = np.concatenate(([1.0], np.cumprod(flat[:-1])))
            right = np.concatenate((np.cumprod(flat[::-1])[-2::-1], [1.0]))
            return ((g * left * right).reshape(x.shape),)

        return _node(np.asarray(v), "prod", (a,), vjp)

    v = x.prod(axis=axis)

    def vjp(g):
        moved = np.moveaxis(x, axis, -1)
        n = moved.shape[-1]
        left = np.ones_like(moved)
        right = np.ones_like(moved)
        left[..., 1:] = np.cumprod(moved[..., :-1], axis=-1)
        right[..., :-1] = np.cumprod(moved[..., :0:-1], axis=-1)[..., ::-1]
        grad = np.moveaxis(left * right, -1, axis)
        return (np.expand_dims(g, axis) * grad,)

    return _node(v, "prod", (a,), vjp)


def minimum(a, b) -> Var:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = wrap(a), wrap(b)
    v = np.minimum(a.value, b.value)
    mask = a.value <= b.value

    def vjp(g):
        return (_unbroadcast(g * mask, a.value.shape),
                _unbroadcast(g * ~mask, b.value.shape))

    return _node(v, "minimum", (a, b), vjp)


def logsumexp(a, axis=-1, keepdims=False) -> Var:
    a = wrap(a)
    hi = np.max(a.value, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    ex = np.exp(a.value - hi)
    tot = ex.sum(axis=axis, keepdims=True)
    v_keep = np.log(tot) + hi
    v = v_keep if keepdims else np.squeeze(v_keep, axis=axis)
    soft = ex / tot

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (gg * soft,)

    return _node(v, "logsumexp", (a,), vjp)


def softmax(a, axis=-1) -> Var:
    a = wrap(a)
    hi = np.max(a.value, axis=axis, keepdims=True)
    ex = np.exp(a.value - hi)
    v = ex / ex.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * v).sum(axis=axis, keepdims=True)
        return (v * (g - inner),)

    return _node(v, "softmax", (a,), vjp)


def reshape(a, shape) -> Var:
    a = wrap(a)
    v = a.value.reshape(shape)
    return _node(v, "reshape", (a,), lambda g: (g.reshape(a.value.shape),))


def concat(parts: Sequence, axis=-1) -> Var:
    parts = tuple(wrap(p) for p in parts)
    v = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(v, "concat", parts, vjp)


def narrow(a, axis: int, start: int, length: int) -> Var:
    """Contiguous slice [start, start+length) along one axis."""
    a = wrap(a)
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    v = a.value[index]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[index] = g
        return (out,)

    return _node(v, "narrow", (a,), vjp)


def select_component(a, idx) -> Var:
    """Pick one row per batch element: a (B, N, ...) and idx (B,) -> (B, ...)."""
    a = wrap(a)
    idx = np.asarray(idx)
    rows = np.arange(a.value.shape[0])
    v = a.value[rows, idx]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return (out,)

    return _node(v, "select_component", (a,), vjp)


def stopgrad(a) -> Var:
    a = wrap(a)
    return Var(a.value, "stopgrad", (), None, requires_grad=False)


def _toposort(root: Var):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        key = id(node)
        if key in seen or not node.requires_grad:
            continue
        seen.add(key)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backprop_grad(loss: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to the given leaves.

    Raises on non-scalar losses and on graph nodes built outside the primitive
    set. Leaves the loss does not reach get zero gradients.
    """
    if not isinstance(loss, Var):
        raise AutodiffError("loss must be a Var")
    if loss.value.shape != ():
        raise AutodiffError(f"loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return [np.zeros_like(l.value) for l in leaves]

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=_FLOAT)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op not in _KNOWN_OPS:
            raise UnsupportedPrimitiveError(f"unknown primitive {node.op!r}")
        if node.op == "leaf":
            grads[id(node)] = g
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            have = grads.get(key)
            grads[key] = pg if have is None else have + pg
    return [grads.get(id(l), np.zeros_like(l.value)) for l in leaves]
