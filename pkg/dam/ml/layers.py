"""
Building blocks of the backbone on top of dam.ml.autograd
"""
import logging

import numpy as np

from dam.errors import ModelError, ShapeError
from dam.ml import autograd as ag
from dam.ml.autograd import Tensor

logger = logging.getLogger(__name__)


class Module:
    """Parameter container; parameters are Tensors with requires_grad, children are Modules"""

    def named_parameters(self, prefix=''):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + '.')
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ModelError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f'load_state_dict[{name}]', p.shape, value.shape)
            p.data = value.astype(p.data.dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    """y = x W + b with W stored [d_in, d_out], uniform(+-1/sqrt(d_in)) init"""

    def __init__(self, d_in, d_out, rng):
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(d_out,)), requires_grad=True)

    def __call__(self, x):
        x = ag.as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError('linear', x.shape, self.weight.shape)
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    """linear -> GELU -> linear -> dropout"""

    def __init__(self, d_in, d_hidden, rng, dropout=0.0):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_in, rng)
        self.dropout = dropout

    def __call__(self, x, rng=None, training=False):
        return ag.dropout(self.fc2(ag.gelu(self.fc1(x))), self.dropout, rng, training)


class MultiheadAttention(Module):
    """
    Scaled dot-product attention over n_heads heads.

    A zero key/value slot is appended after projection, so every query can
    put weight on "nothing". Returned weights therefore have one column more
    than there are keys; the last column is that slot.
    """

    def __init__(self, d_model, n_heads, rng, dropout=0.0):
        if d_model % n_heads:
            raise ShapeError('attention', (d_model,), (n_heads,))
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.dropout = dropout

    def _split_heads(self, x):
        m, n, _ = x.shape
        return x.reshape(m, n, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _with_zero_slot(self, x):
        m, h, _, d = x.shape
        return ag.concat([x, Tensor(np.zeros((m, h, 1, d)))], axis=2)

    def __call__(self, query, key, value, rng=None, training=False):
        """
        Args:
            query: Tensor [M, Lq, D]
            key, value: Tensor [M, Lk, D]

        Returns:
            (output Tensor [M, Lq, D], weights array [M, H, Lq, Lk + 1])
        """
        if key.shape != value.shape or query.shape[0] != key.shape[0] or query.shape[-1] != key.shape[-1]:
            raise ShapeError('attention', query.shape, key.shape, value.shape)
        m, lq, d = query.shape
        q = self._split_heads(self.q_proj(query))
        k = self._with_zero_slot(self._split_heads(self.k_proj(key)))
        v = self._with_zero_slot(self._split_heads(self.v_proj(value)))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        weights = ag.softmax(scores, axis=-1)
        attended = ag.dropout(weights, self.dropout, rng, training) @ v
        out = attended.transpose(0, 2, 1, 3).reshape(m, lq, d)
        return self.out_proj(out), weights.data
