"""Layer objects over time-major activations.

Activations flow as ``T x B x ...`` arrays. Stateless layers fold time into
the batch axis; spiking layers unroll along time. Because no layer feeds
back into an earlier one, running the network layer by layer over the whole
sequence is equivalent to stepping it timestep by timestep.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .. import neurons
from ..neurons import NeuronParams
from . import kernels as K


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0


class Layer:
    def params(self) -> dict[str, Param]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, training: bool):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


def _fold(x):
    return x.reshape(x.shape[0] * x.shape[1], *x.shape[2:])


def _unfold(y, T, B):
    return y.reshape(T, B, *y.shape[1:])


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    def __init__(self, cin, cout, rng, dtype=np.float32, bias=True):
        fan_in = cin * 9
        self.w = Param(kaiming_uniform(rng, (cout, cin, 3, 3), fan_in, dtype))
        self.b = Param(rng.uniform(-1, 1, cout).astype(dtype) / math.sqrt(fan_in)) if bias else None
        self.cin, self.cout = cin, cout

    def params(self):
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        return out

    def forward(self, x, training):
        T, B = x.shape[:2]
        y, self._cache = K.conv2d_fwd(_fold(x), self.w.value, None if self.b is None else self.b.value)
        return _unfold(y, T, B)

    def backward(self, g):
        T, B = g.shape[:2]
        gx, gw, gb = K.conv2d_bwd(_fold(g), self._cache)
        self.w.grad += gw
        if self.b is not None:
            self.b.grad += gb
        return _unfold(gx, T, B)


class BatchNorm2d(Layer):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.gamma = Param(np.ones(channels, dtype))
        self.beta = Param(np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum, self.eps = momentum, eps

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training):
        T, B = x.shape[:2]
        y, self._cache = K.batchnorm_fwd(
            _fold(x), self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )
        return _unfold(y, T, B)

    def backward(self, g):
        T, B = g.shape[:2]
        gx, gg, gb = K.batchnorm_bwd(_fold(g), self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return _unfold(gx, T, B)


class MaxPool2(Layer):
    def forward(self, x, training):
        T, B = x.shape[:2]
        y, self._cache = K.maxpool2_fwd(_fold(x))
        return _unfold(y, T, B)

    def backward(self, g):
        T, B = g.shape[:2]
        return _unfold(K.maxpool2_bwd(_fold(g), self._cache), T, B)


class Linear(Layer):
    def __init__(self, fin, fout, rng, dtype=np.float32):
        self.w = Param(kaiming_uniform(rng, (fout, fin), fin, dtype))
        self.b = Param(rng.uniform(-1, 1, fout).astype(dtype) / math.sqrt(fin))

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, training):
        T, B = x.shape[:2]
        y, self._cache = K.linear_fwd(_fold(x), self.w.value, self.b.value)
        return _unfold(y, T, B)

    def backward(self, g):
        T, B = g.shape[:2]
        gx, gw, gb = K.linear_bwd(_fold(g), self._cache)
        self.w.grad += gw
        self.b.grad += gb
        return _unfold(gx, T, B)


class Dropout(Layer):
    def __init__(self, rate, rng):
        self.rate, self.rng = rate, rng

    def forward(self, x, training):
        y, self._mask = K.dropout_fwd(x, self.rate, training, self.rng)
        return y

    def backward(self, g):
        return K.dropout_bwd(g, self._mask)


class Flatten(Layer):
    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Spiking(Layer):
    """A population of neurons; unrolls its membrane dynamics over time."""

    def __init__(self, params: NeuronParams, dtype=np.float32):
        self.neuron = params
        self.decay_override: float | None = None
        self.a = Param(np.array(neurons.plif_logit(params.tau), dtype=np.float64)) if params.kind == "PLIF" else None

    def params(self):
        return {"a": self.a} if self.a is not None else {}

    def set_mode(self, **changes):
        self.neuron = replace(self.neuron, **changes)

    def forward(self, x, training):
        a = float(self.a.value) if self.a is not None else 0.0
        out, self._trace = neurons.unroll(x, self.neuron, a, decay=self.decay_override)
        return out.astype(x.dtype, copy=False)

    def backward(self, g):
        gx, gk = neurons.unroll_backward(g, self._trace)
        if self.a is not None and self.decay_override is None:
            k = self._trace.k
            self.a.grad += gk * k * (1.0 - k)
        return gx.astype(g.dtype, copy=False)


class Sequential(Layer):
    def __init__(self, layers: list[Layer], names: list[str] | None = None):
        self.layers = list(layers)
        self.names = names or [str(i) for i in range(len(layers))]

    def params(self):
        out = {}
        for name, layer in zip(self.names, self.layers):
            for k, p in layer.params().items():
                out[f"{name}.{k}"] = p
        return out

    def buffers(self):
        out = {}
        for name, layer in zip(self.names, self.layers):
            for k, b in layer.buffers().items():
                out[f"{name}.{k}"] = b
        return out

    def forward(self, x, training):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def __len__(self):
        return len(self.layers)
