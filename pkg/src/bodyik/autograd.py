"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough to train the refiner and discriminators through the body model:
broadcasting arithmetic, matmul, reductions, indexing, concatenation and a
handful of smooth nonlinearities. Everything is float64.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _is_basic_index(idx) -> bool:
    """Slices/ints/ellipsis only: no repeated elements, so plain assignment suffices."""
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if p.requires_grad)
        if not parents:
            return Tensor(data)
        return Tensor(data, True, parents, backward)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backward -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return [_unbroadcast(g, p.shape) for p in (a, b) if p.requires_grad]

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: [-g])

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            out = []
            if a.requires_grad:
                out.append(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                out.append(_unbroadcast(g * a.data, b.shape))
            return out

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            out = []
            if a.requires_grad:
                out.append(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                out.append(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
            return out

        return Tensor._make(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)
        if e == 2.0:
            return Tensor._make(a.data * a.data, (a,), lambda g: [2.0 * g * a.data])
        return Tensor._make(a.data ** e, (a,), lambda g: [g * e * a.data ** (e - 1.0)])

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        a2 = a.data[None, :] if a.ndim == 1 else a.data
        b2 = b.data[:, None] if b.ndim == 1 else b.data
        out2 = a2 @ b2

        def bw(g):
            g2 = np.reshape(g, out2.shape)
            out = []
            if a.requires_grad:
                out.append(_unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(a.shape))
            if b.requires_grad:
                out.append(_unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(b.shape))
            return out

        return Tensor._make(a.data @ b.data, (a, b), bw)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- shape ops ------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return [np.broadcast_to(g, a.shape).copy()]

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: [g.reshape(a.shape)])

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: [g.transpose(inv)])

    def swapaxes(self, i: int, j: int):
        a = self
        return Tensor._make(np.swapaxes(a.data, i, j), (a,), lambda g: [np.swapaxes(g, i, j)])

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, idx):
        a = self

        basic = _is_basic_index(idx)

        def bw(g):
            out = np.zeros_like(a.data)
            if basic:
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return [out]

        return Tensor._make(a.data[idx], (a,), bw)

    # -- elementwise ----------------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: [g * y])

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: [g / a.data])

    def sqrt(self):
        y = np.sqrt(self.data)
        return Tensor._make(y, (self,), lambda g: [g * 0.5 / y])

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: [g * (1.0 - y * y)])

    def abs(self):
        a = self
        return Tensor._make(np.abs(a.data), (a,), lambda g: [g * np.sign(a.data)])

    def relu(self):
        a = self
        return Tensor._make(np.maximum(a.data, 0.0), (a,), lambda g: [g * (a.data > 0)])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return [p for t, p in zip(tensors, parts) if t.requires_grad]

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return [parts[i] for i, t in enumerate(tensors) if t.requires_grad]

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get exactly zero weight."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return [y * (g - np.sum(g * y, axis=axis, keepdims=True))]

    return Tensor._make(y, (x,), bw)


def l2norm(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm; the subgradient at zero is taken as zero."""
    x = as_tensor(x)
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return [np.where(n > 0, x.data / safe, 0.0) * gg]

    out = n.reshape(()) if axis is None else np.squeeze(n, axis=axis)
    return Tensor._make(out, (x,), bw)


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Cross product along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    return stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU, fused into one node."""
    x = as_tensor(x)
    v = x.data
    v2 = v * v
    th = np.tanh(_GELU_C * (v + 0.044715 * v2 * v))
    y = 0.5 * v * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * v2)
        return [g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner)]

    return Tensor._make(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gamma + beta


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max-norm relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))
