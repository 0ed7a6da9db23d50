"""Parameter containers, small layers and the Adam optimizer."""
import math

import numpy as np

from .functional import layer_norm, linear
from .tensor import Tensor, conv2d


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Discovers parameters through attributes, lists and nested modules."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}", value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def _walk(name, value):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def xavier(rng, fan_in, fan_out, shape, gain=1.0):
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True, gain=1.0):
        self.weight = Parameter(xavier(rng, n_in, n_out, (n_in, n_out), gain))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k, padding=None, bias=True):
        kh, kw = (k, k) if isinstance(k, int) else k
        fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        self.weight = Parameter(xavier(rng, fan_in, fan_out, (c_out, c_in, kh, kw)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.padding = ((kh - 1) // 2, (kw - 1) // 2) if padding is None else padding

    def __call__(self, x):
        y = conv2d(x, self.weight, padding=self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1).expand(y.shape)
        return y


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, rng, dim, hidden):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x):
        return self.fc2(self.fc1(x).relu())


class Adam:
    """Adaptive-moment gradient descent over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        grads = [np.asarray(g.data if isinstance(g, Tensor) else g) for g in grads]
        if self.clip_norm is not None:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.clip_norm:
                grads = [g * (self.clip_norm / total) for g in grads]
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p.data = p.data - self.lr * np.asarray(g.data if isinstance(g, Tensor) else g)
