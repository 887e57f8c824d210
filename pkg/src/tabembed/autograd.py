"""Tiny reverse-mode autodiff over numpy arrays.

Implements only the operations the table encoder needs. Every op carries a
hand-written backward rule; calling ``backward()`` on a scalar loss walks the
tape and accumulates gradients into ``Tensor.grad`` as plain numpy arrays of
the same dtype as the forward data. There is no graph retention, no in-place
mutation tracking, and no device abstraction -- the whole engine is meant to
be auditable against finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "no_grad",
    "matmul",
    "softmax",
    "log_softmax",
    "sigmoid",
    "gelu",
    "log",
    "clip",
    "layer_norm",
]

_grad_enabled = True


class no_grad:
    """Context manager that disables tape construction (forward only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def zero_grad(self):
        self.grad = None

    # -- graph construction --------------------------------------------
    def backward(self):
        """Backpropagate from a scalar; accumulates into .grad fields."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            a_shape, b_shape = self.data.shape, other.data.shape
            out._backward = lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            a, b = self, other
            out._backward = lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            a, b = self, other
            out._backward = lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            )
        return out

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))
        if out.requires_grad:
            shape = self.data.shape
            parts = key if isinstance(key, tuple) else (key,)
            fancy = any(isinstance(k, (np.ndarray, list)) for k in parts)

            def backward(g):
                full = np.zeros(shape, dtype=g.dtype)
                if fancy:
                    # integer-array indexing may repeat elements
                    np.add.at(full, key, g)
                else:
                    full[key] += g
                return (full,)

            out._backward = backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            orig = self.data.shape
            out._backward = lambda g: (g.reshape(orig),)
        return out

    def swapaxes(self, i: int, j: int):
        out = _node(self.data.swapaxes(i, j), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g.swapaxes(i, j),)
        return out

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            shape = self.data.shape

            def backward(g):
                if axis is None:
                    return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
                if not keepdims:
                    axes = axis if isinstance(axis, tuple) else (axis,)
                    g = np.expand_dims(g, axes)
                return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data, name: str) -> Tensor:
    """A learnable leaf tensor."""
    t = Tensor(np.asarray(data), requires_grad=True, name=name)
    return t


# -- free-function ops ----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")
    out = _node(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:

        def backward(g):
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape)
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
            return ga, gb

        out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (x,))
    if out.requires_grad:
        out._backward = lambda g: ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = _node(y, (x,))
    if out.requires_grad:
        sm = np.exp(y)
        out._backward = lambda g: (g - sm * g.sum(axis=axis, keepdims=True),)
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype, copy=False)
    out = _node(y, (x,))
    if out.requires_grad:
        out._backward = lambda g: (g * y * (1.0 - y),)
    return out


def log(x: Tensor) -> Tensor:
    out = _node(np.log(x.data), (x,))
    if out.requires_grad:
        out._backward = lambda g: (g / x.data,)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = _node(np.clip(x.data, lo, hi), (x,))
    if out.requires_grad:
        mask = ((x.data > lo) & (x.data < hi)).astype(x.data.dtype)
        out._backward = lambda g: (g * mask,)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    d = x.data
    phi = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out = _node(d * phi, (x,))
    if out.requires_grad:
        dens = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        out._backward = lambda g: (g * (phi + d * dens),)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(gain.data * xhat + bias.data, (x, gain, bias))
    if out.requires_grad:

        def backward(g):
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            lead = tuple(range(g.ndim - 1))
            ggain = _unbroadcast((g * xhat).sum(axis=lead), gain.data.shape)
            gbias = _unbroadcast(g.sum(axis=lead), bias.data.shape)
            return gx, ggain, gbias

        out._backward = backward
    return out
