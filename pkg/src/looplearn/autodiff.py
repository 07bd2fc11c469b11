"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tensor records one node of a DAG; backward(root) zeroes gradients across
the reachable subgraph and then accumulates d(root)/d(node) into every node.
Every op also accepts plain numpy inputs and returns plain numpy output when
no Tensor is involved, so the same numeric code serves both the training
path (with gradients) and the evaluation path (arrays only).
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    """Graph node holding float64 data and, after backward(), its gradient."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x):
    """Underlying numpy value of a Tensor, or the input unchanged."""
    return x.data if isinstance(x, Tensor) else x


def _parents_of(*args):
    return tuple(a for a in args if isinstance(a, Tensor))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av + bv
    if not (is_tensor(a) or is_tensor(b)):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def _bw():
        if is_tensor(a):
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if is_tensor(b):
            b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw
    return out


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av - bv
    if not (is_tensor(a) or is_tensor(b)):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def _bw():
        if is_tensor(a):
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if is_tensor(b):
            b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw
    return out


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av * bv
    if not (is_tensor(a) or is_tensor(b)):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def _bw():
        if is_tensor(a):
            a.grad += _unbroadcast(out.grad * bv, a.data.shape)
        if is_tensor(b):
            b.grad += _unbroadcast(out.grad * av, b.data.shape)

    out._backward = _bw
    return out


def matmul(a, b):
    """2-D matrix product."""
    av, bv = value_of(a), value_of(b)
    out_v = av @ bv
    if not (is_tensor(a) or is_tensor(b)):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def _bw():
        if is_tensor(a):
            a.grad += out.grad @ bv.T
        if is_tensor(b):
            b.grad += av.T @ out.grad

    out._backward = _bw
    return out


def relu(x):
    xv = value_of(x)
    out_v = np.maximum(xv, 0.0)
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        x.grad += out.grad * (xv > 0.0)

    out._backward = _bw
    return out


def sqrt(x):
    """Square root with subgradient 0 at exactly 0 (the norm losses hit 0
    when student and teacher coincide; a zero subgradient avoids NaN there)."""
    xv = value_of(x)
    out_v = np.sqrt(xv)
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(out_v > 0.0, out.grad / (2.0 * out_v), 0.0)
        x.grad += g

    out._backward = _bw
    return out


def sum_all(x):
    """Sum of all entries, as a scalar."""
    xv = value_of(x)
    out_v = xv.sum()
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        x.grad += out.grad

    out._backward = _bw
    return out


def pick(x, index):
    """Scalar element x[index], index a tuple."""
    xv = value_of(x)
    out_v = xv[index]
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        x.grad[index] += out.grad

    out._backward = _bw
    return out


def segment(flat, start, shape):
    """Contiguous slice of a flat vector, reshaped. Used to view a layer's
    weights inside the single flat parameter vector."""
    size = int(np.prod(shape))
    fv = value_of(flat)
    out_v = fv[start:start + size].reshape(shape).copy()
    if not is_tensor(flat):
        return out_v
    out = Tensor(out_v, (flat,))

    def _bw():
        flat.grad[start:start + size] += out.grad.ravel()

    out._backward = _bw
    return out


def conv2d(x, w, b):
    """Valid stride-1 cross-correlation with bias; kernels module does the work."""
    xv, wv, bv = value_of(x), value_of(w), value_of(b)
    out_v = kernels.conv2d_forward(xv, wv, bv)
    if not (is_tensor(x) or is_tensor(w) or is_tensor(b)):
        return out_v
    out = Tensor(out_v, _parents_of(x, w, b))

    def _bw():
        dx, dw, db = kernels.conv2d_backward(xv, wv, np.ascontiguousarray(out.grad))
        if is_tensor(x):
            x.grad += dx
        if is_tensor(w):
            w.grad += dw
        if is_tensor(b):
            b.grad += db

    out._backward = _bw
    return out


def gem_pool(x, p):
    """Generalized-mean pooling over the two trailing spatial axes.

    (n,c,h,w) -> (n,c): ((1/hw) sum x^p)^(1/p). Requires x >= 0 and p >= 1;
    p=1 is plain mean pooling, p -> inf approaches per-channel max.
    """
    if p < 1.0:
        raise ValueError("gem_pool requires exponent p >= 1")
    xv = value_of(x)
    n, c, h, w = xv.shape
    hw = h * w
    if p == 1.0:
        out_v = xv.mean(axis=(2, 3))
    else:
        m = (xv ** p).mean(axis=(2, 3))
        out_v = m ** (1.0 / p)
    if not is_tensor(x):
        return out_v

    out = Tensor(out_v, (x,))

    def _bw():
        g = out.grad
        if p == 1.0:
            x.grad += (g / hw)[:, :, None, None] * np.ones((1, 1, h, w))
        else:
            # d out / d x_i = x_i^(p-1) * out^(1-p) / hw, zero where out == 0
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(out_v > 0.0, out_v ** (1.0 - p), 0.0)
            x.grad += (g * scale / hw)[:, :, None, None] * xv ** (p - 1.0)

    out._backward = _bw
    return out


def l2norm_rows(x):
    """Normalize each row of a (n,d) array to unit L2 norm."""
    xv = value_of(x)
    norms = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise ValueError("cannot L2-normalize a zero vector")
    out_v = xv / norms
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        g = out.grad
        dots = (g * out_v).sum(axis=1, keepdims=True)
        x.grad += (g - out_v * dots) / norms

    out._backward = _bw
    return out


def gram(x):
    """x @ x.T for a (n,d) array: matrix of pairwise dot products."""
    xv = value_of(x)
    out_v = xv @ xv.T
    if not is_tensor(x):
        return out_v
    out = Tensor(out_v, (x,))

    def _bw():
        x.grad += (out.grad + out.grad.T) @ xv

    out._backward = _bw
    return out


def frobenius(x):
    """Frobenius norm, composed from primitive nodes."""
    return sqrt(sum_all(mul(x, x)))


def _topo(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(node) into .grad across root's subgraph.

    Grads are re-zeroed first, so backward may be called repeatedly on
    different scalars of a shared graph.
    """
    if root.data.shape != ():
        raise ValueError("backward expects a scalar root")
    order = _topo(root)
    for t in order:
        t.grad = np.zeros_like(t.data)
    root.grad = np.ones_like(root.data)
    for t in reversed(order):
        if t._backward is not None:
            t._backward()
