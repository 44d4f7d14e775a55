"""Cross-modality attention (CMA) and the early/middle/late fusion baselines.

Temporal attention (TA) turns the per-timestep firing rate of one modality
into a gate over time; spatial attention (SA) turns the per-pixel firing
rate of one modality into a gate over space. In the default CMA the event
branch produces TA scores that gate frame features and the frame branch
produces SA scores that gate event features; the gated features are then
concatenated along channels.

Single-sample functions take ``T x C x H x W`` features. The
``CrossModalAttention`` layer works on batched ``T x B x C x H x W`` arrays
and carries the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .neurons import sigmoid
from .nn import kernels as K
from .nn.layers import Flatten, Param, Spiking
from .nn.model import ModelSpec, SpikingNet, build_decoder, conv_block

FUSION_MODES = ("none-event", "none-frame", "EF", "MF", "LF-or", "LF-avg", "CMA")
ATTENTION_KINDS = ("TA", "SA")


def _relu(x):
    return np.maximum(x, 0)


def reduced_width(T: int, r: int) -> int:
    """Hidden width T/r of the temporal attention, with r clamped so T/r >= 1."""
    r = max(1, min(int(r), T))
    while T % r:
        r -= 1
    return T // r


@dataclass
class CmaParams:
    M1: np.ndarray  # T x T/r
    M2: np.ndarray  # T/r x T
    M3: np.ndarray  # 3 x 3
    r: int = 1

    def __post_init__(self):
        T = self.M1.shape[0]
        if self.r < 1 or T % self.r:
            raise ValueError(f"reduction ratio {self.r} must divide T={T}")
        if self.M1.shape != (T, T // self.r) or self.M2.shape != (T // self.r, T):
            raise ValueError("M1 must be T x T/r and M2 T/r x T")
        if self.M3.shape != (3, 3):
            raise ValueError("M3 must be 3 x 3")

    @classmethod
    def zeros(cls, T: int, r: int = 4) -> "CmaParams":
        h = reduced_width(T, r)
        return cls(np.zeros((T, h)), np.zeros((h, T)), np.zeros((3, 3)), T // h)

    @classmethod
    def init(cls, T: int, r: int, rng: np.random.Generator, dtype=np.float64) -> "CmaParams":
        h = reduced_width(T, r)
        M1 = rng.uniform(-1, 1, (T, h)) * np.sqrt(6.0 / T)
        M2 = rng.uniform(-1, 1, (h, T)) * np.sqrt(6.0 / h)
        M3 = np.zeros((3, 3))
        M3[1, 1] = 1.0
        return cls(M1.astype(dtype), M2.astype(dtype), M3.astype(dtype), T // h)


# -- single-sample operations -------------------------------------------------


def temporal_rate(s: np.ndarray) -> np.ndarray:
    """Mean activity per timestep over channels and pixels: length T."""
    return s.mean(axis=(1, 2, 3))


def spatial_rate(s: np.ndarray) -> np.ndarray:
    """Mean activity per pixel over timesteps and channels: H x W."""
    return s.mean(axis=(0, 1))


def temporal_attention(r_e: np.ndarray, M1: np.ndarray, M2: np.ndarray, literal_order: bool = False) -> np.ndarray:
    if r_e.shape[0] != M1.shape[0] or M1.shape[1] != M2.shape[0] or M2.shape[1] != r_e.shape[0]:
        raise ValueError("shape mismatch between rates and temporal attention weights")
    if literal_order:
        return _relu(sigmoid(r_e @ M1) @ M2)
    return sigmoid(_relu(r_e @ M1) @ M2)


def spatial_attention(r_f: np.ndarray, M3: np.ndarray) -> np.ndarray:
    q, _ = K.conv2d_fwd(r_f[None, None], M3[None, None])
    return _relu(q[0, 0])


def fuse_temporal(d_e: np.ndarray, s_f: np.ndarray) -> np.ndarray:
    if d_e.shape != (s_f.shape[0],):
        raise ValueError(f"shape mismatch: {d_e.shape} scores for {s_f.shape[0]} timesteps")
    return d_e[:, None, None, None] * s_f


def fuse_spatial(d_f: np.ndarray, s_e: np.ndarray) -> np.ndarray:
    if d_f.shape != s_e.shape[2:]:
        raise ValueError(f"shape mismatch: scores {d_f.shape} vs features {s_e.shape[2:]}")
    return d_f[None, None] * s_e


def cma_forward(s_e, s_f, params: CmaParams, scores=None, literal_order: bool = False) -> np.ndarray:
    """Cross-gate the two feature blocks and concatenate: T x 2C x H x W.

    ``scores=(d_e, d_f)`` injects attention scores instead of computing them.
    """
    if s_e.shape != s_f.shape:
        raise ValueError(f"shape mismatch: event {s_e.shape} vs frame {s_f.shape}")
    if scores is None:
        d_e = temporal_attention(temporal_rate(s_e), params.M1, params.M2, literal_order)
        d_f = spatial_attention(spatial_rate(s_f), params.M3)
    else:
        d_e, d_f = scores
    return np.concatenate([fuse_spatial(d_f, s_e), fuse_temporal(d_e, s_f)], axis=1)


def early_fuse(x_e: np.ndarray, x_f: np.ndarray) -> np.ndarray:
    if x_e.shape[0] != x_f.shape[0] or x_e.shape[2:] != x_f.shape[2:]:
        raise ValueError("event and frame tensors must share T, H and W")
    return np.concatenate([x_e, x_f], axis=1)


def middle_fuse(s_e: np.ndarray, s_f: np.ndarray) -> np.ndarray:
    if s_e.shape != s_f.shape:
        raise ValueError(f"shape mismatch: event {s_e.shape} vs frame {s_f.shape}")
    return np.concatenate([s_e, s_f], axis=1)


def late_fuse_or(o_e: np.ndarray, o_f: np.ndarray) -> np.ndarray:
    if o_e.shape != o_f.shape:
        raise ValueError("spike outputs must have equal shapes")
    return np.maximum(o_e, o_f)


def late_fuse_avg(p_e: np.ndarray, p_f: np.ndarray) -> np.ndarray:
    if p_e.shape != p_f.shape:
        raise ValueError("score vectors must have equal shapes")
    return (p_e + p_f) / 2


def class_probabilities(O: np.ndarray) -> np.ndarray:
    """Time-summed voting output normalised to sum to one (uniform if silent)."""
    s = O.sum(axis=0)
    tot = s.sum()
    return s / tot if tot > 0 else np.full_like(s, 1.0 / s.shape[-1])


# -- batched attention with backward -----------------------------------------


class _TemporalGate:
    """TA scores from ``source`` applied to ``target`` along time (batched)."""

    def __init__(self, T, r, rng, dtype, literal_order=False):
        p = CmaParams.init(T, r, rng, dtype)
        self.M1, self.M2 = Param(p.M1), Param(p.M2)
        self.literal = literal_order

    def params(self):
        return {"M1": self.M1, "M2": self.M2}

    def scores(self, source):
        T = source.shape[0]
        if T != self.M1.value.shape[0]:
            raise ValueError(f"temporal attention built for T={self.M1.value.shape[0]}, got T={T}")
        r = source.mean(axis=(2, 3, 4)).T  # B x T
        zp = r @ self.M1.value
        z = sigmoid(zp) if self.literal else _relu(zp)
        a = z @ self.M2.value
        d = _relu(a) if self.literal else sigmoid(a)
        self._c = (source.shape, r, zp, z, a, d)
        return d.T  # T x B

    def apply(self, d, target):
        return d[:, :, None, None, None] * target

    def backward(self, g_out, target, d):
        """Returns (grad target, grad source)."""
        shape, r, zp, z, a, dd = self._c
        g_target = d[:, :, None, None, None] * g_out
        g_d = (g_out * target).sum(axis=(2, 3, 4)).T  # B x T
        g_a = g_d * (a > 0) if self.literal else g_d * dd * (1 - dd)
        self.M2.grad += z.T @ g_a
        g_z = g_a @ self.M2.value.T
        g_zp = g_z * z * (1 - z) if self.literal else g_z * (zp > 0)
        self.M1.grad += r.T @ g_zp
        g_r = (g_zp @ self.M1.value.T).T  # T x B
        n = shape[2] * shape[3] * shape[4]
        g_source = np.broadcast_to((g_r / n)[:, :, None, None, None], shape)
        return g_target, g_source


class _SpatialGate:
    """SA scores from ``source`` applied to ``target`` over pixels (batched)."""

    def __init__(self, rng, dtype):
        M3 = np.zeros((3, 3), dtype)
        M3[1, 1] = 1.0
        self.M3 = Param(M3)

    def params(self):
        return {"M3": self.M3}

    def scores(self, source):
        rf = source.mean(axis=(0, 2))  # B x H x W
        q, cache = K.conv2d_fwd(rf[:, None], self.M3.value[None, None])
        q = q[:, 0]
        self._c = (source.shape, q, cache)
        return _relu(q)  # B x H x W

    def apply(self, d, target):
        return d[None, :, None] * target

    def backward(self, g_out, target, d):
        shape, q, cache = self._c
        g_target = d[None, :, None] * g_out
        g_d = (g_out * target).sum(axis=(0, 2))
        g_q = (g_d * (q > 0))[:, None]
        g_rf, g_m3, _ = K.conv2d_bwd(g_q, cache)
        self.M3.grad += g_m3[0, 0]
        n = shape[0] * shape[2]
        g_source = np.broadcast_to((g_rf[:, 0] / n)[None, :, None], shape)
        return g_target, g_source


class CrossModalAttention:
    """Batched CMA layer.

    ``event_attn`` names the attention computed from event features (and
    applied to frame features); ``frame_attn`` the one computed from frame
    features (applied to event features). The published design is TA/SA.
    """

    def __init__(self, T, r=4, event_attn="TA", frame_attn="SA", literal_order=False, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        for kind in (event_attn, frame_attn):
            if kind not in ATTENTION_KINDS:
                raise ValueError(f"attention kind must be one of {ATTENTION_KINDS}, got {kind!r}")
        self.event_attn, self.frame_attn = event_attn, frame_attn

        def gate(kind):
            return _TemporalGate(T, r, rng, dtype, literal_order) if kind == "TA" else _SpatialGate(rng, dtype)

        self.from_event = gate(event_attn)
        self.from_frame = gate(frame_attn)
        self.override = None  # (scores_on_frame, scores_on_event) test hook

    def params(self):
        out = {f"event_{self.event_attn}.{k}": p for k, p in self.from_event.params().items()}
        out.update({f"frame_{self.frame_attn}.{k}": p for k, p in self.from_frame.params().items()})
        return out

    def forward(self, s_e, s_f, training=False):
        if s_e.shape != s_f.shape:
            raise ValueError(f"shape mismatch: event {s_e.shape} vs frame {s_f.shape}")
        if self.override is not None:
            d_on_f, d_on_e = self.override
        else:
            d_on_f = self.from_event.scores(s_e)
            d_on_e = self.from_frame.scores(s_f)
        self._c = (s_e, s_f, d_on_f, d_on_e)
        out_e = self.from_frame.apply(d_on_e, s_e)
        out_f = self.from_event.apply(d_on_f, s_f)
        return np.concatenate([out_e, out_f], axis=2).astype(s_e.dtype, copy=False)

    def backward(self, g):
        s_e, s_f, d_on_f, d_on_e = self._c
        C = s_e.shape[2]
        g_e_out, g_f_out = g[:, :, :C], g[:, :, C:]
        if self.override is not None:
            return self.from_frame.apply(d_on_e, g_e_out), self.from_event.apply(d_on_f, g_f_out)
        g_se, g_sf_from_gate = self.from_frame.backward(g_e_out, s_e, d_on_e)
        g_sf, g_se_from_gate = self.from_event.backward(g_f_out, s_f, d_on_f)
        return g_se + g_se_from_gate, g_sf + g_sf_from_gate


# -- fusion networks -----------------------------------------------------------


@dataclass
class FusionConfig:
    mode: str = "CMA"
    placement: int = 0  # CMA/MF after this conv block; 0 means the last one
    event_attn: str = "TA"
    frame_attn: str = "SA"
    reduction: int = 4
    literal_order: bool = False

    def validate(self, n_conv: int) -> None:
        problems = []
        if self.mode not in FUSION_MODES:
            problems.append(f"unknown fusion mode {self.mode!r} (valid: {', '.join(FUSION_MODES)})")
        if self.placement < 0 or self.placement > n_conv:
            problems.append(f"placement {self.placement} outside 1..{n_conv}")
        for kind in (self.event_attn, self.frame_attn):
            if kind not in ATTENTION_KINDS:
                problems.append(f"attention kind {kind!r} not in {ATTENTION_KINDS}")
        if self.reduction < 1:
            problems.append("reduction must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


class UniModel:
    """One modality (or the early-fused 5-channel input) through one trunk."""

    def __init__(self, net: SpikingNet, keys: tuple[str, ...]):
        self.net, self.keys = net, keys
        self.spec = net.spec

    def _input(self, batch):
        if len(self.keys) == 1:
            return batch[self.keys[0]]
        return np.concatenate([batch[k] for k in self.keys], axis=2)

    def forward(self, batch, training=False):
        return self.net.forward(self._input(batch), training)

    def backward(self, g):
        self.net.backward(g)

    def params(self):
        return self.net.params()

    def buffers(self):
        return self.net.buffers()

    def spiking_layers(self):
        return list(self.net.spiking_layers())


class DualModel:
    """Two encoders fused after block ``placement`` by concat (MF) or CMA."""

    def __init__(self, spec: ModelSpec, T: int, fusion: FusionConfig, rng: np.random.Generator):
        spec.validate()
        self.spec = spec
        dtype = np.dtype(spec.dtype)
        k = fusion.placement or spec.n_conv
        self.k = k
        self.enc_e, self.enc_f = [], []
        for enc, cin in ((self.enc_e, 2), (self.enc_f, 3)):
            for i in range(k):
                enc.append(conv_block(cin, spec.conv_width(i), spec.neuron, rng, dtype))
                cin = spec.conv_width(i)
        self.cma = None
        if fusion.mode == "CMA":
            self.cma = CrossModalAttention(
                T, fusion.reduction, fusion.event_attn, fusion.frame_attn, fusion.literal_order, rng, dtype
            )
        cin = 2 * spec.conv_width(k - 1)
        self.trunk = []
        for i in range(k, spec.n_conv):
            self.trunk.append(conv_block(cin, spec.conv_width(i), spec.neuron, rng, dtype))
            cin = spec.conv_width(i)
        h, w = spec.spatial_after(spec.n_conv)
        self.flatten = Flatten()
        self.decoder = build_decoder(spec, cin * h * w, rng, dtype)

    def params(self):
        out = {}
        for prefix, blocks in (("enc_e", self.enc_e), ("enc_f", self.enc_f), ("trunk", self.trunk)):
            for i, blk in enumerate(blocks):
                out.update({f"{prefix}{i}.{n}": p for n, p in blk.params().items()})
        if self.cma is not None:
            out.update({f"cma.{n}": p for n, p in self.cma.params().items()})
        out.update({f"dec.{n}": p for n, p in self.decoder.params().items()})
        return out

    def buffers(self):
        out = {}
        for prefix, blocks in (("enc_e", self.enc_e), ("enc_f", self.enc_f), ("trunk", self.trunk)):
            for i, blk in enumerate(blocks):
                out.update({f"{prefix}{i}.{n}": b for n, b in blk.buffers().items()})
        return out

    def features(self, batch, training=False):
        s_e = batch["event"].astype(self.spec.dtype, copy=False)
        s_f = batch["frame"].astype(self.spec.dtype, copy=False)
        for blk in self.enc_e:
            s_e = blk.forward(s_e, training)
        for blk in self.enc_f:
            s_f = blk.forward(s_f, training)
        return s_e, s_f

    def forward(self, batch, training=False):
        s_e, s_f = self.features(batch, training)
        self._C = s_e.shape[2]
        x = self.cma.forward(s_e, s_f, training) if self.cma is not None else middle_fuse_batched(s_e, s_f)
        for blk in self.trunk:
            x = blk.forward(x, training)
        spikes = self.decoder.forward(self.flatten.forward(x, training), training)
        return K.voting_fwd(spikes, self.spec.n_classes)

    def backward(self, g):
        g = self.flatten.backward(self.decoder.backward(K.voting_bwd(g, self.spec.n_out)))
        for blk in reversed(self.trunk):
            g = blk.backward(g)
        if self.cma is not None:
            g_e, g_f = self.cma.backward(g)
        else:
            g_e, g_f = g[:, :, :self._C], g[:, :, self._C:]
        for blk in reversed(self.enc_e):
            g_e = blk.backward(g_e)
        for blk in reversed(self.enc_f):
            g_f = blk.backward(g_f)

    def spiking_layers(self):
        out = []
        for blk in self.enc_e + self.enc_f + self.trunk:
            out += [l for l in blk.layers if isinstance(l, Spiking)]
        out += [l for l in self.decoder.layers if isinstance(l, Spiking)]
        return out


def middle_fuse_batched(s_e, s_f):
    if s_e.shape != s_f.shape:
        raise ValueError(f"shape mismatch: event {s_e.shape} vs frame {s_f.shape}")
    return np.concatenate([s_e, s_f], axis=2)


class LateModel:
    """Two complete unimodal networks merged at the decision layer."""

    def __init__(self, spec: ModelSpec, how: str, rng: np.random.Generator):
        self.spec = spec
        self.how = how
        self.net_e = SpikingNet(replace(spec, in_channels=2), rng)
        self.net_f = SpikingNet(replace(spec, in_channels=3), rng)

    def params(self):
        out = {f"event.{k}": v for k, v in self.net_e.params().items()}
        out.update({f"frame.{k}": v for k, v in self.net_f.params().items()})
        return out

    def buffers(self):
        out = {f"event.{k}": v for k, v in self.net_e.buffers().items()}
        out.update({f"frame.{k}": v for k, v in self.net_f.buffers().items()})
        return out

    def forward(self, batch, training=False):
        C = self.spec.n_classes
        if self.how == "or":
            o_e = self.net_e.forward_spikes(batch["event"], training)
            o_f = self.net_f.forward_spikes(batch["frame"], training)
            self._pick_e = o_e >= o_f
            return K.voting_fwd(late_fuse_or(o_e, o_f), C)
        return late_fuse_avg(self.net_e.forward(batch["event"], training), self.net_f.forward(batch["frame"], training))

    def backward(self, g):
        if self.how == "or":
            gs = K.voting_bwd(g, self.spec.n_out)
            self.net_e.backward_spikes(gs * self._pick_e)
            self.net_f.backward_spikes(gs * ~self._pick_e)
        else:
            self.net_e.backward(g / 2)
            self.net_f.backward(g / 2)

    def spiking_layers(self):
        return list(self.net_e.spiking_layers()) + list(self.net_f.spiking_layers())


def build_model(spec: ModelSpec, fusion: FusionConfig, T: int, rng: np.random.Generator | int = 0):
    """Instantiate the network for a fusion mode.

    ``spec.in_channels`` is overridden per mode (2 events, 3 frames, 5 early).
    """
    fusion.validate(spec.n_conv)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mode = fusion.mode
    if mode == "none-event":
        return UniModel(SpikingNet(replace(spec, in_channels=2), rng), ("event",))
    if mode == "none-frame":
        return UniModel(SpikingNet(replace(spec, in_channels=3), rng), ("frame",))
    if mode == "EF":
        return UniModel(SpikingNet(replace(spec, in_channels=5), rng), ("event", "frame"))
    if mode in ("MF", "CMA"):
        return DualModel(spec, T, fusion, rng)
    return LateModel(spec, "or" if mode == "LF-or" else "avg", rng)


def required_inputs(mode: str) -> tuple[str, ...]:
    return {"none-event": ("event",), "none-frame": ("frame",)}.get(mode, ("event", "frame"))
