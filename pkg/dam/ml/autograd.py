"""
Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Every op records its parents and a backward
closure; Tensor.backward() orders the recorded graph topologically (the
tape) and visits each node once, accumulating gradients into leaf tensors
that require them.
"""
import contextlib
import logging
import os

import numpy as np
from scipy import special

from dam.errors import GraphError, ModelError, ShapeError

logger = logging.getLogger(__name__)

_state = {
    'dtype': np.float32,
    'grad_enabled': True,
    'debug': os.getenv('DAM_DEBUG', '').lower() in ('1', 'true', 'yes'),
}


def get_dtype():
    return _state['dtype']


@contextlib.contextmanager
def precision(dtype):
    """Run a block with a different floating-point precision (e.g. float64 for gradient checks)"""
    previous = _state['dtype']
    _state['dtype'] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state['dtype'] = previous


@contextlib.contextmanager
def no_grad():
    """Forward-only block: no graph is recorded"""
    previous = _state['grad_enabled']
    _state['grad_enabled'] = False
    try:
        yield
    finally:
        _state['grad_enabled'] = previous


def set_debug(enabled):
    _state['debug'] = bool(enabled)


def debug_enabled():
    return _state['debug']


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, name=None):
        dtype = get_dtype()
        if isinstance(data, np.ndarray) and data.dtype == dtype:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ''
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def backward(self, grad=None):
        """Populate .grad of every leaf that requires it"""
        if not self.requires_grad:
            raise GraphError("backward() on a tensor that is not attached to a graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = build_tape(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def build_tape(root):
    """Topological order of the graph under root (iterative DFS, each node once)"""
    order, visited = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if _state['grad_enabled'] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('mul', a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('div', a, b)

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _result(a.data / b.data, (a, b), backward)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb
    return _result(a.data @ b.data, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', a.shape, shape) from None
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    inverse = None if axes is None else np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError('concat', ref, t.shape)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def gelu(x):
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf"""
    cdf = 0.5 * (1.0 + special.erf(x.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)

    def backward(g):
        return (g * (cdf + x.data * pdf),)
    return _result(x.data * cdf, (x,), backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _result(y, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then apply a learnable gain and bias"""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError('layer_norm', x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        flat = g.reshape(-1, n)
        return dx, (flat * xhat.reshape(-1, n)).sum(axis=0), flat.sum(axis=0)
    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x, p, rng, training):
    if not training or p <= 0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def huber(diff, delta=1.0):
    """Element-wise Huber penalty of a residual tensor"""
    d = diff.data
    small = np.abs(d) <= delta
    value = np.where(small, 0.5 * d * d, delta * (np.abs(d) - 0.5 * delta))

    def backward(g):
        return (g * np.where(small, d, delta * np.sign(d)),)
    return _result(value, (diff,), backward)


def safe_divisor(a, floor=1e-6):
    """Keep |a| >= floor (sign preserved, zero maps to +floor); gradient is cut where clamped"""
    d = a.data
    clamped = np.abs(d) < floor
    value = np.where(clamped, np.where(d < 0, -floor, floor), d)
    return _result(value, (a,), lambda g: (np.where(clamped, 0.0, g),))


def mean_merge(x, dest, counts):
    """
    Merge tokens by unweighted mean

    Args:
        x: Tensor [M, N, D]
        dest: int array [M, N], output slot of every input token
        counts: array [M, K], number of inputs landing in each slot

    Returns:
        Tensor [M, K, D]
    """
    m, n, d = x.shape
    if dest.shape != (m, n):
        raise ShapeError('mean_merge', x.shape, dest.shape)
    k = counts.shape[1]
    inv = (1.0 / counts)[..., None].astype(x.data.dtype)
    out = np.zeros((m, k, d), dtype=x.data.dtype)
    np.add.at(out, (np.arange(m)[:, None], dest), x.data)

    def backward(g):
        return (np.take_along_axis(g * inv, dest[..., None], axis=1),)
    return _result(out * inv, (x,), backward)


def check_finite(t, layer=None, what='activation'):
    """Debug-mode NaN/inf guard"""
    if _state['debug'] and not np.all(np.isfinite(t.data)):
        raise ModelError(f"non-finite {what} detected", layer=layer)
    return t
