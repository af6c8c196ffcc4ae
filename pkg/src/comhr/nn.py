"""Minimal layer containers built on :mod:`comhr.diffcore`."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter


class Module:
    """Owns Parameters (directly or through child modules)."""

    def parameters(self):
        seen = {}
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Parameter):
                    seen.setdefault(item.name, item)
                elif isinstance(item, Module):
                    for p in item.parameters():
                        seen.setdefault(p.name, p)
                elif isinstance(item, dict):
                    for v in item.values():
                        if isinstance(v, Module):
                            for p in v.parameters():
                                seen.setdefault(p.name, p)
                        elif isinstance(v, Parameter):
                            seen.setdefault(v.name, v)
        return list(seen.values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def he_normal(rng, fan_in, shape, gain=1.0):
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, name, n_in, n_out, rng, gain=1.0, zero=False):
        w = np.zeros((n_in, n_out)) if zero else he_normal(rng, n_in, (n_in, n_out), gain)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x):
        x = dc.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise dc.ShapeError("linear", x.shape, self.weight.shape)
        return dc.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Two linear layers with a ReLU between them."""

    def __init__(self, name, n_in, n_hidden, n_out, rng, zero_last=False, out_gain=1.0):
        self.fc1 = Linear(f"{name}.fc1", n_in, n_hidden, rng)
        self.fc2 = Linear(f"{name}.fc2", n_hidden, n_out, rng, gain=out_gain, zero=zero_last)

    def __call__(self, x):
        return self.fc2(dc.relu(self.fc1(x)))


class Conv1d(Module):
    """Same-padded 1-D convolution over axis 1 of an (N, L, C) tensor."""

    def __init__(self, name, c_in, c_out, rng, kernel=3):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.kernel = kernel
        self.c_in = c_in
        self.lin = Linear(name, kernel * c_in, c_out, rng)

    def __call__(self, x):
        x = dc.as_tensor(x)
        n, length, c = x.shape
        if c != self.c_in:
            raise dc.ShapeError("conv1d", x.shape, (self.kernel * self.c_in,))
        pad = self.kernel // 2
        zeros = dc.Tensor(np.zeros((n, pad, c)))
        padded = dc.concat([zeros, x, zeros], axis=1)
        # window w at position l reads padded[l + w]
        idx = np.arange(length)[:, None] + np.arange(self.kernel)[None, :]
        windows = dc.take(padded, idx.ravel(), axis=1).reshape(n, length, self.kernel * c)
        return self.lin(windows)
