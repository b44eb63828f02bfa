"""Reverse-mode automatic differentiation on NumPy arrays.

A `Tensor` wraps a float64 ndarray and remembers, for each op, the parent
tensors and a vector-Jacobian-product closure. `Tensor.backward()` walks the
recorded graph once in reverse topological order and accumulates gradients
into every reachable tensor with `requires_grad=True`.

Only the ops the codec needs are implemented. Ops between non-grad tensors
record nothing, so inference pays almost no bookkeeping cost.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

__all__ = [
    "Tensor", "param", "constant", "as_tensor",
    "matmul", "reshape", "transpose", "concatenate", "getitem",
    "tsum", "tmean", "softmax", "exp", "log", "sqrt", "tanh", "sigmoid",
    "softplus", "relu", "gelu", "tabs", "maximum", "clip", "stop_gradient",
    "numeric_grad", "check_gradients",
]

_LN2 = float(np.log(2.0))


class Tensor:
    """Node in the autodiff graph. `value` is always a float64 ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_links")

    # ndarray op Tensor must fall back to the reflected Tensor op
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, links=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._links = links  # tuple of (parent, vjp) pairs, grad parents only

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{flag})"

    # -- graph traversal ----------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into `.grad` of every grad leaf."""
        if grad is None:
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._links:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._links:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return _add(self, as_tensor(other))

    def __radd__(self, other):
        return _add(as_tensor(other), self)

    def __sub__(self, other):
        return _sub(self, as_tensor(other))

    def __rsub__(self, other):
        return _sub(as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    def __rmul__(self, other):
        return _mul(as_tensor(other), self)

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return _mul(self, as_tensor(-1.0))

    def __pow__(self, p):
        return _powc(self, float(p))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def param(value):
    """Leaf tensor that collects gradients."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value):
    return Tensor(value)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, links):
    links = tuple((p, f) for p, f in links if p.requires_grad)
    return Tensor(value, requires_grad=bool(links), links=links)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after NumPy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------

def _add(a, b):
    return _node(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ])


def _sub(a, b):
    return _node(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ])


def _mul(a, b):
    return _node(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ])


def _div(a, b):
    out = a.value / b.value
    return _node(out, [
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * out / b.value, b.value.shape)),
    ])


def _powc(a, p):
    return _node(a.value ** p, [
        (a, lambda g: g * p * a.value ** (p - 1.0)),
    ])


def matmul(a, b):
    """Matrix product with stacked (batched) leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    out = a.value @ b.value
    return _node(out, [
        (a, lambda g: _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)),
    ])


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), [(a, lambda g: g.transpose(inv))])


def getitem(a, idx):
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return out

    return _node(a.value[idx], [(a, vjp)])


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    value = np.concatenate([t.value for t in tensors], axis=axis)
    return _node(value, [(t, make_vjp(i)) for i, t in enumerate(tensors)])


# -- reductions ---------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, shape).copy()

    return _node(a.value.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[i] for i in ax]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- elementwise nonlinearities ------------------------------------------------

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, [(a, lambda g: g * out)])


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.value), [(a, lambda g: g / a.value)])


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, [(a, lambda g: g * 0.5 / out)])


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    a = as_tensor(a)
    out = _sp.expit(a.value)
    return _node(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    a = as_tensor(a)
    return _node(np.logaddexp(0.0, a.value), [(a, lambda g: g * _sp.expit(a.value))])


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def gelu(a):
    """Exact Gaussian-error-linear unit: x * Phi(x)."""
    a = as_tensor(a)
    x = a.value
    cdf = 0.5 * (1.0 + _sp.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _node(x * cdf, [(a, lambda g: g * (cdf + x * pdf))])


def tabs(a):
    a = as_tensor(a)
    sign = np.sign(a.value)
    return _node(np.abs(a.value), [(a, lambda g: g * sign)])


def maximum(a, floor):
    """Elementwise max against a scalar; gradient flows where a > floor."""
    a = as_tensor(a)
    mask = a.value > floor
    return _node(np.maximum(a.value, floor), [(a, lambda g: g * mask)])


def clip(a, lo, hi):
    """Clamp; gradient passes only in the open interval."""
    a = as_tensor(a)
    mask = (a.value > lo) & (a.value < hi)
    return _node(np.clip(a.value, lo, hi), [(a, lambda g: g * mask)])


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _node(out, [(a, vjp)])


def stop_gradient(a):
    return Tensor(as_tensor(a).value)


# -- finite-difference utilities ----------------------------------------------

def numeric_grad(f, arrays, eps=1e-5):
    """Central-difference gradient of scalar f(*arrays) w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for base in arrays:
        g = np.zeros_like(base)
        flat = base.ravel()  # view into the copy that f actually sees
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*arrays)
            flat[i] = orig - eps
            lo = f(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(build, arrays, eps=1e-5, rtol=1e-3, atol=1e-8):
    """Compare autodiff gradients of `build(*params)` against finite differences.

    `build` receives one Tensor per input array and must return a scalar Tensor.
    Returns the worst relative error observed.
    """
    params = [param(a) for a in arrays]
    out = build(*params)
    out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]

    def scalar(*arrs):
        consts = [constant(a) for a in arrs]
        return float(build(*consts).value)

    numeric = numeric_grad(scalar, [p.value for p in params], eps=eps)
    worst = 0.0
    for got, want in zip(analytic, numeric):
        denom = np.maximum(np.abs(want), atol / rtol)
        rel = np.abs(got - want) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)
    return worst
