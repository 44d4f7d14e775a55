"""Baseline spiking network: conv encoder, FC decoder, voting output."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..neurons import NeuronParams
from . import kernels as K
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2,
    Sequential,
    Spiking,
)

DEFAULT_CHANNELS = (32, 64, 128, 128, 128)


@dataclass
class ModelSpec:
    in_channels: int = 2
    height: int = 32
    width: int = 32
    n_conv: int = 5
    n_fc: int = 2
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    hidden: int = 512
    n_classes: int = 10
    n_out: int = 0  # decoder width N; 0 means 10 * n_classes
    dropout: float = 0.5
    neuron: NeuronParams = field(default_factory=NeuronParams)
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_out == 0:
            self.n_out = 10 * self.n_classes
        self.channels = tuple(int(c) for c in self.channels)

    def validate(self) -> None:
        problems = []
        if self.n_conv < 1:
            problems.append("n_conv must be >= 1")
        if self.n_fc < 1:
            problems.append("n_fc must be >= 1")
        if self.n_classes < 1:
            problems.append("n_classes must be >= 1")
        elif self.n_out % self.n_classes:
            problems.append(f"decoder width N={self.n_out} must be a multiple of C={self.n_classes}")
        if not self.channels or min(self.channels) < 1:
            problems.append("channel widths must be positive")
        if self.hidden < 1:
            problems.append("hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be float32 or float64")
        if self.in_channels < 1:
            problems.append("in_channels must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    def conv_width(self, i: int) -> int:
        return self.channels[min(i, len(self.channels) - 1)]

    def spatial_after(self, n_blocks: int) -> tuple[int, int]:
        h, w = self.height, self.width
        for _ in range(n_blocks):
            h, w = (h + 1) // 2, (w + 1) // 2
        return h, w


def conv_block(cin: int, cout: int, neuron: NeuronParams, rng, dtype) -> Sequential:
    return Sequential(
        [Conv2d(cin, cout, rng, dtype), BatchNorm2d(cout, dtype), Spiking(neuron, dtype), MaxPool2()],
        ["conv", "bn", "neuron", "pool"],
    )


def build_decoder(spec: ModelSpec, fin: int, rng, dtype) -> Sequential:
    layers, names = [], []
    drop_rng = np.random.default_rng(rng.integers(2**62))
    for i in range(spec.n_fc):
        fout = spec.n_out if i == spec.n_fc - 1 else spec.hidden
        layers += [Linear(fin, fout, rng, dtype), Dropout(spec.dropout, drop_rng), Spiking(spec.neuron, dtype)]
        names += [f"fc{i}", f"drop{i}", f"neuron{i}"]
        fin = fout
    return Sequential(layers, names)


class SpikingNet:
    """Conv encoder (n_conv blocks) -> flatten -> FC decoder -> voting."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator | int = 0):
        spec.validate()
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.spec = spec
        dtype = np.dtype(spec.dtype)
        self.blocks = []
        cin = spec.in_channels
        for i in range(spec.n_conv):
            cout = spec.conv_width(i)
            self.blocks.append(conv_block(cin, cout, spec.neuron, rng, dtype))
            cin = cout
        h, w = spec.spatial_after(spec.n_conv)
        self.flatten = Flatten()
        self.decoder = build_decoder(spec, cin * h * w, rng, dtype)

    def params(self):
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update({f"enc{i}.{k}": v for k, v in blk.params().items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.params().items()})
        return out

    def buffers(self):
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update({f"enc{i}.{k}": v for k, v in blk.buffers().items()})
        return out

    def encode(self, x, training=False, upto: int | None = None):
        for blk in self.blocks[:upto]:
            x = blk.forward(x, training)
        return x

    def encode_backward(self, g, upto: int | None = None):
        for blk in reversed(self.blocks[:upto]):
            g = blk.backward(g)
        return g

    def forward_spikes(self, x, training=False):
        if x.shape[2] != self.spec.in_channels:
            raise ValueError(f"channel mismatch: model expects {self.spec.in_channels}, input has {x.shape[2]}")
        x = x.astype(self.spec.dtype, copy=False)
        feat = self.encode(x, training)
        return self.decoder.forward(self.flatten.forward(feat, training), training)

    def forward(self, x, training=False):
        """``x``: T x B x C x H x W. Returns per-timestep class scores T x B x C."""
        return K.voting_fwd(self.forward_spikes(x, training), self.spec.n_classes)

    def backward_spikes(self, g):
        g = self.flatten.backward(self.decoder.backward(g))
        return self.encode_backward(g)

    def backward(self, g_out):
        return self.backward_spikes(K.voting_bwd(g_out, self.spec.n_out))

    def spiking_layers(self):
        for blk in self.blocks:
            yield from (l for l in blk.layers if isinstance(l, Spiking))
        yield from (l for l in self.decoder.layers if isinstance(l, Spiking))


def build_baseline(spec: ModelSpec, rng=0) -> SpikingNet:
    return SpikingNet(spec, rng)


def forward_unimodal(model: SpikingNet, x) -> np.ndarray:
    """Evaluate one EventTensor/FrameTensor (or its T x C x H x W array); returns T x C."""
    data = getattr(x, "data", x)
    out = model.forward(np.asarray(data)[:, None], training=False)
    return out[:, 0]


def with_neuron(spec: ModelSpec, **changes) -> ModelSpec:
    return replace(spec, neuron=replace(spec.neuron, **changes))
